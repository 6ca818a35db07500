"""Command-line interface: one subcommand per pipeline stage plus end-to-end runs.

Exit codes: 0 success, 2 configuration problems, 3 data/artifact problems,
4 diverged training. Each command validates its configuration before touching
any data, and every run writes the configuration snapshot plus seed into the
output directory, so re-invoking with that snapshot reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, default_config
from .dataset import load_survey, preprocess_survey
from .errors import (
    ConfigError,
    DataError,
    HglocError,
    StageError,
    TrainingDivergedError,
)
from .evaluation import (
    label_accuracy,
    location_errors,
    write_cdf_csv,
    write_confusion_csv,
    write_metrics,
)
from .pipeline import (
    ABLATION_MODES,
    STAGE_ORDER,
    evaluate_online,
    load_state,
    run_ablation,
    run_baseline_graphsage,
    run_offline,
    run_online,
)

PREDICTION_COLUMNS = ("building", "floor", "longitude", "latitude")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def summary_line(metrics: dict) -> str:
    return " ".join(f"{k}={_fmt(metrics[k])}" for k in sorted(metrics))


def _resolve_config(args) -> PipelineConfig:
    if args.config is not None:
        config = PipelineConfig.load(args.config)
    elif args.dataset in ("uji", "uts"):
        config = default_config(args.dataset)
    else:
        raise ConfigError(
            ["a custom dataset needs --config with the dataset fields filled in"]
        )
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    config.ensure_valid()
    return config


def write_predictions_csv(path_or_handle, result) -> None:
    """Prediction rows in original units; floats at full round-trip precision."""
    def emit(fh):
        writer = csv.writer(fh)
        has_buildings = result.buildings is not None
        cols = PREDICTION_COLUMNS if has_buildings else PREDICTION_COLUMNS[1:]
        writer.writerow(cols)
        for i in range(len(result.floors)):
            row = [
                int(result.floors[i]),
                f"{result.longitude[i]:.17g}",
                f"{result.latitude[i]:.17g}",
            ]
            if has_buildings:
                row.insert(0, int(result.buildings[i]))
            writer.writerow(row)

    if hasattr(path_or_handle, "write"):
        emit(path_or_handle)
    else:
        with open(path_or_handle, "w", newline="", encoding="utf-8") as fh:
            emit(fh)


def read_predictions_csv(path):
    """Returns (buildings or None, floors, xy [N,2]) from a prediction file."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError:
        raise DataError(f"{path}: cannot read prediction file") from None
    if not rows:
        raise DataError(f"{path}: empty prediction file")
    header = rows[0]
    required = set(PREDICTION_COLUMNS[1:])
    if not required.issubset(header):
        raise DataError(
            f"{path}: prediction file must have columns {sorted(required)}"
        )
    idx = {name: header.index(name) for name in header}
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no prediction rows")
    try:
        floors = np.array([int(r[idx["floor"]]) for r in body], dtype=np.int64)
        xy = np.array(
            [[float(r[idx["longitude"]]), float(r[idx["latitude"]])] for r in body],
            dtype=np.float64,
        )
        buildings = None
        if "building" in idx:
            buildings = np.array([int(r[idx["building"]]) for r in body], dtype=np.int64)
    except (ValueError, IndexError) as err:
        raise DataError(f"{path}: malformed prediction row: {err}") from None
    return buildings, floors, xy


def _load_online(state, csv_path):
    online, _ = preprocess_survey(csv_path, state.config.dataset,
                                  floor_offset=state.floor_offset)
    return online


def _test_metrics(report) -> dict:
    metrics = {
        "test_floor_accuracy": report.floor_accuracy,
        "test_mle": report.mle_meters,
    }
    if report.building_accuracy is not None:
        metrics["test_building_accuracy"] = report.building_accuracy
    return metrics


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_stage(args) -> int:
    config = _resolve_config(args)
    state = run_offline(config, args.train_csv, args.out,
                        resume=not args.no_resume, until=args.stage)
    if state.metrics:
        print(summary_line(state.metrics))
    else:
        print(f"completed stages through {args.stage!r} in {state.out_dir}")
    return 0


def cmd_pipeline(args) -> int:
    config = _resolve_config(args)
    state = run_offline(config, args.train_csv, args.out, resume=not args.no_resume)
    metrics = dict(state.metrics)
    if args.test_csv is not None:
        online = _load_online(state, args.test_csv)
        result = run_online(state, online, use_adapter=args.use_adapter)
        report = evaluate_online(state, online, result)
        metrics.update(_test_metrics(report))
        out = Path(args.out)
        write_predictions_csv(out / "predictions_test.csv", result)
        write_metrics(out / "metrics_test.txt", _test_metrics(report))
        write_confusion_csv(out / "confusion_test.csv", report.confusion,
                            class_labels=(state.floor_codec.classes - state.floor_offset).tolist())
        write_cdf_csv(out / "cdf_test.csv", report.error_list)
    print(summary_line(metrics))
    return 0


def cmd_predict(args) -> int:
    state = load_state(args.checkpoint_dir)
    online = _load_online(state, args.input)
    result = run_online(state, online, use_adapter=args.use_adapter)
    if args.output is None:
        write_predictions_csv(sys.stdout, result)
    else:
        write_predictions_csv(args.output, result)
        print(f"wrote {len(result.floors)} prediction rows to {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    config = _resolve_config(args)
    buildings, floors, xy = read_predictions_csv(args.predictions)
    _, lon, lat, true_floors, true_buildings = load_survey(args.truth, config.dataset)
    true_xy = np.column_stack([lon, lat])
    if len(floors) != len(true_floors):
        raise DataError(
            f"prediction rows ({len(floors)}) do not match truth rows ({len(true_floors)})"
        )
    errors = np.sort(location_errors(xy, true_xy))
    metrics = {
        "test_floor_accuracy": label_accuracy(floors, true_floors),
        "test_mle": float(errors.mean()),
    }
    if buildings is not None and config.dataset.has_buildings:
        metrics["test_building_accuracy"] = label_accuracy(buildings, true_buildings)
    report_dir = Path(args.report_dir) if args.report_dir else Path(args.predictions).parent
    report_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(report_dir / "metrics_eval.txt", metrics)
    labels = np.union1d(true_floors, floors)
    lookup = {int(c): i for i, c in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(true_floors, floors):
        confusion[lookup[int(t)], lookup[int(p)]] += 1
    write_confusion_csv(report_dir / "confusion_eval.csv", confusion,
                        class_labels=labels.tolist())
    write_cdf_csv(report_dir / "cdf_eval.csv", errors)
    print(summary_line(metrics))
    return 0


def cmd_ablate(args) -> int:
    state = load_state(args.checkpoint_dir)
    online = _load_online(state, args.test_csv) if args.test_csv else None
    metrics = run_ablation(state, args.mode, online_set=online)
    write_metrics(Path(args.checkpoint_dir) / f"metrics_ablation_{args.mode}.txt", metrics)
    print(summary_line(metrics))
    return 0


def cmd_baseline(args) -> int:
    state = load_state(args.checkpoint_dir)
    online = _load_online(state, args.test_csv) if args.test_csv else None
    metrics = run_baseline_graphsage(state, online_set=online)
    write_metrics(Path(args.checkpoint_dir) / "metrics_baseline.txt", metrics)
    print(summary_line(metrics))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_config_options(sub, with_seed=True):
    sub.add_argument("--config", help="configuration file (key = value text)")
    sub.add_argument("--dataset", choices=("uji", "uts", "custom"), default="custom",
                     help="built-in dataset defaults, or custom (requires --config)")
    if with_seed:
        sub.add_argument("--seed", type=int, help="override the configured seed")


def _add_offline_options(sub):
    _add_config_options(sub)
    sub.add_argument("--out", required=True, help="artifact directory")
    sub.add_argument("--train-csv", help="training survey CSV")
    sub.add_argument("--no-resume", action="store_true",
                     help="rebuild every stage even if artifacts are present")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hgloc",
        description="Indoor localization from Wi-Fi fingerprints with "
                    "graph neural networks over heterogeneous multigraphs.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    for stage in STAGE_ORDER:
        sub = commands.add_parser(stage, help=f"run offline stages through {stage!r}")
        _add_offline_options(sub)
        sub.set_defaults(func=cmd_stage, stage=stage)

    sub = commands.add_parser("pipeline", help="full offline run, optional test evaluation")
    _add_offline_options(sub)
    sub.add_argument("--test-csv", help="held-out survey to localize and score")
    sub.add_argument("--use-adapter", action="store_true",
                     help="fit the online input adapter on a labeled fraction")
    sub.set_defaults(func=cmd_pipeline)

    sub = commands.add_parser("predict", help="localize records with saved artifacts")
    sub.add_argument("--checkpoint-dir", required=True, help="finished artifact directory")
    sub.add_argument("--input", required=True, help="records to localize (survey CSV schema)")
    sub.add_argument("--output", help="prediction CSV path (default: stdout)")
    sub.add_argument("--use-adapter", action="store_true",
                     help="fit the online input adapter on a labeled fraction")
    sub.set_defaults(func=cmd_predict)

    sub = commands.add_parser("evaluate", help="score a prediction file against ground truth")
    _add_config_options(sub, with_seed=False)
    sub.add_argument("--predictions", required=True, help="prediction CSV")
    sub.add_argument("--truth", required=True, help="ground-truth survey CSV")
    sub.add_argument("--report-dir", help="where to write metric/report files")
    sub.set_defaults(func=cmd_evaluate)

    sub = commands.add_parser("ablate", help="retrain final localizers under an ablation mode")
    sub.add_argument("--checkpoint-dir", required=True)
    sub.add_argument("--mode", required=True, choices=ABLATION_MODES)
    sub.add_argument("--test-csv", help="optional held-out survey for test metrics")
    sub.set_defaults(func=cmd_ablate)

    sub = commands.add_parser("baseline", help="evaluate the single-graph localizer")
    sub.add_argument("--checkpoint-dir", required=True)
    sub.add_argument("--test-csv", help="optional held-out survey for test metrics")
    sub.set_defaults(func=cmd_baseline)

    return parser


def _exit_code(err: BaseException) -> int:
    if isinstance(err, ConfigError):
        return 2
    if isinstance(err, TrainingDivergedError):
        return 4
    if isinstance(err, DataError):
        return 3
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return _exit_code(err.cause)
    except HglocError as err:
        print(f"error: {err}", file=sys.stderr)
        return _exit_code(err)


if __name__ == "__main__":
    sys.exit(main())
