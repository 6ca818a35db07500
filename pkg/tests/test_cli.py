"""Subprocess-level checks for the command-line interface.

Each test invokes the installed package through `python -m hgloc.cli` so the
exit codes, stdout contract, and cross-process artifact compatibility are
exercised exactly as a shell user would see them.
"""

import dataclasses
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from hgloc.config import PipelineConfig
from hgloc.kvtext import parse_kv_text
from hgloc.synthetic import SyntheticWorld


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "hgloc.cli", *[str(a) for a in args]],
        capture_output=True, text=True,
    )


@pytest.fixture(scope="module")
def cli_world(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_world")
    world = SyntheticWorld(seed=5)
    world.write_survey(root / "train.csv", points_per_floor=6, seed=1)
    world.write_survey(root / "test.csv", points_per_floor=2, seed=2)
    cfg = PipelineConfig(
        dataset=world.descriptor(),
        val_ratio=0.2, k=2, n_records=1, hidden=16, mlp_hidden=(8, 4),
        sfe_aux_hidden=(8, 4), batch_size=32, max_epochs=4, patience=2,
        sfe_epochs=2, adapter_epochs=3, adapter_fraction=0.25, seed=0,
    )
    cfg.save(root / "world.cfg")
    dataclasses.replace(cfg, lr=1.0e15, max_epochs=3).save(root / "diverge.cfg")
    return root


@pytest.fixture(scope="module")
def finished_run(cli_world):
    out = cli_world / "run"
    proc = run_cli(
        "pipeline", "--config", cli_world / "world.cfg",
        "--train-csv", cli_world / "train.csv",
        "--test-csv", cli_world / "test.csv",
        "--out", out,
    )
    assert proc.returncode == 0, proc.stderr
    return out, proc.stdout


def test_pipeline_prints_one_line_summary_and_writes_artifacts(cli_world, finished_run):
    out, stdout = finished_run
    lines = [ln for ln in stdout.splitlines() if ln.strip()]
    assert len(lines) == 1
    for key in ("val_mle=", "val_floor_accuracy=", "test_mle=",
                "test_floor_accuracy=", "test_building_accuracy="):
        assert key in lines[0]
    for name in ("run.cfg", "run_manifest.json", "metrics_val.txt",
                 "predictions_test.csv", "metrics_test.txt",
                 "confusion_test.csv", "cdf_test.csv"):
        assert (out / name).exists(), name


def test_rerun_with_snapshot_reproduces_metrics(cli_world, finished_run):
    # the snapshot written into the run dir must reproduce the summary exactly
    out, stdout = finished_run
    proc = run_cli(
        "pipeline", "--config", out / "run.cfg",
        "--train-csv", cli_world / "train.csv",
        "--test-csv", cli_world / "test.csv",
        "--out", out,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout == stdout


def test_stage_command_stops_at_requested_stage(cli_world):
    out = cli_world / "staged"
    proc = run_cli(
        "train-coarse", "--config", cli_world / "world.cfg",
        "--train-csv", cli_world / "train.csv", "--out", out,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "coarse_regressor.bin").exists()
    assert (out / "predictions_val.bin").exists()
    assert not (out / "sfe_coord.bin").exists()
    assert not (out / "hgnn_coord.bin").exists()


def test_predict_single_record_row(cli_world, finished_run):
    out, _ = finished_run
    one = cli_world / "one_record.csv"
    pd.read_csv(cli_world / "test.csv").head(1).to_csv(one, index=False)
    proc = run_cli("predict", "--checkpoint-dir", out, "--input", one)
    assert proc.returncode == 0, proc.stderr
    lines = proc.stdout.strip().splitlines()
    assert lines[0].split(",") == ["building", "floor", "longitude", "latitude"]
    assert len(lines) == 2
    building, floor, lon, lat = lines[1].split(",")
    assert int(building) in (0, 1)
    assert int(floor) in (0, 1, 2)
    assert np.isfinite(float(lon)) and np.isfinite(float(lat))


def test_predict_file_matches_pipeline_predictions(cli_world, finished_run):
    # same artifacts, same records, no adapter: byte-identical CSV
    out, _ = finished_run
    dest = cli_world / "preds_again.csv"
    proc = run_cli("predict", "--checkpoint-dir", out,
                   "--input", cli_world / "test.csv", "--output", dest)
    assert proc.returncode == 0, proc.stderr
    assert dest.read_bytes() == (out / "predictions_test.csv").read_bytes()


def test_evaluate_bit_identical_to_pipeline_metrics(cli_world, finished_run):
    out, _ = finished_run
    report = cli_world / "report"
    proc = run_cli(
        "evaluate", "--config", cli_world / "world.cfg",
        "--predictions", out / "predictions_test.csv",
        "--truth", cli_world / "test.csv",
        "--report-dir", report,
    )
    assert proc.returncode == 0, proc.stderr
    inline = parse_kv_text((out / "metrics_test.txt").read_text())
    offline = parse_kv_text((report / "metrics_eval.txt").read_text())
    assert offline == inline
    assert (report / "confusion_eval.csv").exists()
    assert (report / "cdf_eval.csv").exists()


def test_ablate_and_baseline_commands(cli_world, finished_run):
    out, _ = finished_run
    proc = run_cli("ablate", "--checkpoint-dir", out, "--mode", "rssi_only")
    assert proc.returncode == 0, proc.stderr
    assert "mode=rssi_only" in proc.stdout
    assert "val_mle=" in proc.stdout
    assert (out / "metrics_ablation_rssi_only.txt").exists()

    proc = run_cli("baseline", "--checkpoint-dir", out,
                   "--test-csv", cli_world / "test.csv")
    assert proc.returncode == 0, proc.stderr
    assert "val_mle=" in proc.stdout and "test_mle=" in proc.stdout
    assert (out / "metrics_baseline.txt").exists()

    proc = run_cli("ablate", "--checkpoint-dir", out, "--mode", "nonsense")
    assert proc.returncode == 2


def test_seed_flag_overrides_config_seed(cli_world):
    out = cli_world / "seeded"
    proc = run_cli(
        "preprocess", "--config", cli_world / "world.cfg", "--seed", 7,
        "--train-csv", cli_world / "train.csv", "--out", out,
    )
    assert proc.returncode == 0, proc.stderr
    assert PipelineConfig.load(out / "run.cfg").seed == 7


def test_config_error_exits_2(cli_world, tmp_path):
    # custom dataset without a config file cannot proceed
    proc = run_cli("pipeline", "--train-csv", cli_world / "train.csv",
                   "--out", tmp_path / "x")
    assert proc.returncode == 2
    assert "error:" in proc.stderr


def test_data_error_exits_3(cli_world, tmp_path):
    proc = run_cli(
        "preprocess", "--config", cli_world / "world.cfg",
        "--train-csv", tmp_path / "missing.csv", "--out", tmp_path / "x",
    )
    assert proc.returncode == 3
    assert "preprocess" in proc.stderr


def test_missing_prediction_file_exits_3(cli_world, tmp_path):
    # OS-level read failures must surface as clean data errors, not tracebacks
    proc = run_cli(
        "evaluate", "--config", cli_world / "world.cfg",
        "--predictions", tmp_path / "nope.csv", "--truth", cli_world / "test.csv",
    )
    assert proc.returncode == 3
    assert "Traceback" not in proc.stderr
    assert "cannot read" in proc.stderr


def test_divergence_exits_4(cli_world, tmp_path):
    proc = run_cli(
        "train-coarse", "--config", cli_world / "diverge.cfg",
        "--train-csv", cli_world / "train.csv", "--out", tmp_path / "x",
    )
    assert proc.returncode == 4
    assert "not finite" in proc.stderr


def test_unknown_command_prints_usage(cli_world):
    proc = run_cli("frobnicate")
    assert proc.returncode != 0
    assert "usage" in proc.stderr.lower()
