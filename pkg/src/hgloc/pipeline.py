"""End-to-end orchestration over an artifact directory.

The offline run is a fixed sequence of stages, each persisting its outputs
before the next starts:

  preprocess -> build-graphs -> train-coarse -> train-sfe
             -> build-multigraphs -> train-hgnn

Every stage is recorded in a JSON manifest with content hashes, so a rerun
under the same configuration fingerprint skips completed stages and loads
their artifacts instead. Any stage failure is wrapped in StageError with the
stage name; artifacts from earlier stages stay on disk for resume.

Online localization builds graphs for unseen records against the frozen
training state. Target-side positions in position-space graphs always come
from the coarse model's PredictionStore, never from ground truth.
"""

from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .dataset import (
    CoordScaler,
    FingerprintSet,
    LabelCodec,
    load_cache,
    preprocess_survey,
    round_half_up,
    save_cache,
    split_by_sampling_point,
)
from .errors import DataError, StageError
from .evaluation import (
    MetricsReport,
    build_report,
    label_accuracy,
    location_errors,
    predicted_classes,
    write_metrics,
)
from .graph import (
    FingerGraph,
    HeteroGraph,
    KnnConfig,
    aggregate_sampling_points,
    assemble_hetero_graph,
    build_graph,
    build_pos_graph,
    deserialize_graph,
    points_from_records,
    serialize_graph,
)
from .kvtext import parse_kv_text
from .models import (
    CoarseLocalizer,
    HeteroGnn,
    OnlineAdapter,
    StackedFeatureEncoder,
    load_checkpoint,
    save_checkpoint,
)
from .serialize import read_container, write_container
from .training import (
    coarse_outputs,
    hetero_outputs,
    train_adapter,
    train_coarse_classifier,
    train_coarse_regressor,
    train_hgnn,
    train_sfe,
)

SEED_STREAM = 0xD5EE  # seed-domain tag for per-model sub-seeds

STAGE_ORDER = (
    "preprocess",
    "build-graphs",
    "train-coarse",
    "train-sfe",
    "build-multigraphs",
    "train-hgnn",
)

TASKS = ("coord", "floor")
_POS_TASK = {"coord": "coordinate", "floor": "floor"}

STAGE_FILES = {
    "preprocess": ("cache_train.bin", "cache_val.bin", "fit.bin"),
    "build-graphs": ("graph_universal_train.bin", "graph_universal_val.bin"),
    "train-coarse": ("coarse_regressor.bin", "coarse_classifier.bin", "predictions_val.bin"),
    "train-sfe": ("sfe_coord.bin", "sfe_floor.bin"),
    "build-multigraphs": tuple(
        f"graph_{space}_{task}_{role}.bin"
        for task in TASKS
        for space in ("rssi", "pos")
        for role in ("train", "val")
    ),
    "train-hgnn": ("hgnn_coord.bin", "hgnn_floor.bin", "metrics_val.txt"),
}

ABLATION_MODES = ("pos_only", "rssi_only", "shared_only", "parallel_only", "no_sfe")

CONFIG_SNAPSHOT = "run.cfg"
MANIFEST_NAME = "run_manifest.json"


def _sub_seed(seed: int, tag: int) -> int:
    """Derived seed for one model/job so siblings never share RNG streams."""
    rng = np.random.default_rng([int(seed), SEED_STREAM, int(tag)])
    return int(rng.integers(0, 2**31))


# tag registry for _sub_seed; init and train streams are kept apart
_SEED_REG_INIT = 1
_SEED_CLS_INIT = 2
_SEED_SFE_COORD_INIT = 3
_SEED_SFE_FLOOR_INIT = 4
_SEED_HGNN_COORD_INIT = 5
_SEED_HGNN_FLOOR_INIT = 6
_SEED_ADAPTER_INIT = 7
_SEED_REG_TRAIN = 11
_SEED_CLS_TRAIN = 12
_SEED_SFE_COORD_TRAIN = 13
_SEED_SFE_FLOOR_TRAIN = 14
_SEED_HGNN_COORD_TRAIN = 15
_SEED_HGNN_FLOOR_TRAIN = 16
_SEED_ADAPTER_TRAIN = 17
_SEED_ADAPTER_ROWS = 18


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ArtifactDir:
    """Output directory plus the stage manifest that makes runs resumable.

    The manifest binds artifacts to a configuration fingerprint. A manifest
    written under a different fingerprint is ignored wholesale, which forces
    a full rebuild rather than mixing artifacts across configurations.
    """

    def __init__(self, out_dir, fingerprint: str, seed: int, resume: bool = True):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.fingerprint = fingerprint
        self.manifest_path = self.dir / MANIFEST_NAME
        manifest = None
        if resume and self.manifest_path.exists():
            try:
                loaded = json.loads(self.manifest_path.read_text(encoding="utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError):
                loaded = None
            if isinstance(loaded, dict) and loaded.get("config_fingerprint") == fingerprint:
                manifest = loaded
        if manifest is None:
            manifest = {
                "config_fingerprint": fingerprint,
                "seed": int(seed),
                "stages": {},
            }
        self.manifest = manifest

    def path(self, name: str) -> Path:
        return self.dir / name

    def stage_complete(self, stage: str) -> bool:
        entry = self.manifest.get("stages", {}).get(stage)
        if not entry:
            return False
        for name, digest in entry["files"].items():
            p = self.path(name)
            if not p.exists() or _file_sha256(p) != digest:
                return False
        return True

    def record_stage(self, stage: str) -> None:
        files = {name: _file_sha256(self.path(name)) for name in STAGE_FILES[stage]}
        self.manifest["stages"][stage] = {"files": files}
        text = json.dumps(self.manifest, indent=2, sort_keys=True) + "\n"
        self.manifest_path.write_text(text, encoding="utf-8")


@dataclass
class PredictionStore:
    """Coarse-model outputs for target rows, in target-row order.

    This is the only admissible source of target-side positions when
    building position-space graphs for validation/online roles. Floors are
    decoded into the training floor space (offset applied), coordinates stay
    standardized.
    """

    coords_std: np.ndarray
    floors: np.ndarray
    buildings: np.ndarray | None = None

    def save(self, path) -> None:
        meta = {"has_buildings": self.buildings is not None, "n": len(self.floors)}
        blobs = {
            "coords_std": np.asarray(self.coords_std, dtype=np.float64),
            "floors": np.asarray(self.floors, dtype=np.int64),
        }
        if self.buildings is not None:
            blobs["buildings"] = np.asarray(self.buildings, dtype=np.int64)
        write_container(path, "predictions", meta, blobs)

    @classmethod
    def load(cls, path) -> "PredictionStore":
        meta, blobs = read_container(path, expect_kind="predictions")
        buildings = blobs["buildings"] if meta["has_buildings"] else None
        return cls(coords_std=blobs["coords_std"], floors=blobs["floors"], buildings=buildings)


@dataclass
class PipelineState:
    """Everything the offline run produced, loaded or freshly trained."""

    config: PipelineConfig
    out_dir: Path
    floor_offset: int | None = None
    train_set: FingerprintSet | None = None
    val_set: FingerprintSet | None = None
    scaler: CoordScaler | None = None
    floor_codec: LabelCodec | None = None
    building_codec: LabelCodec | None = None
    points: object | None = None
    g_train: FingerGraph | None = None
    g_val: FingerGraph | None = None
    coarse_reg: CoarseLocalizer | None = None
    coarse_cls: CoarseLocalizer | None = None
    val_store: PredictionStore | None = None
    sfe_coord: StackedFeatureEncoder | None = None
    sfe_floor: StackedFeatureEncoder | None = None
    hetero_train: dict = field(default_factory=dict)
    hetero_val: dict = field(default_factory=dict)
    hgnn_coord: HeteroGnn | None = None
    hgnn_floor: HeteroGnn | None = None
    metrics: dict = field(default_factory=dict)
    train_results: dict = field(default_factory=dict)


@dataclass
class OnlineResult:
    """Final per-record outputs plus the intermediates tests care about.

    ``floors`` are in the survey's own label space (training offset removed);
    ``floor_classes`` are dense codec indices for confusion matrices.
    Buildings come from the coarse classifier and are final. When an adapter
    was fitted, ``adapter_rows`` holds the online record indices whose labels
    it saw, so callers can score the remaining records separately.
    """

    longitude: np.ndarray
    latitude: np.ndarray
    floors: np.ndarray
    buildings: np.ndarray | None
    coords_std: np.ndarray
    floor_classes: np.ndarray
    provisional: PredictionStore
    universal_graph: FingerGraph
    coord_graph: HeteroGraph
    floor_graph: HeteroGraph
    adapter: OnlineAdapter | None = None
    adapter_rows: np.ndarray | None = None


def _knn(config: PipelineConfig) -> KnnConfig:
    return KnnConfig(k=config.k, n_records=config.n_records)


def _require(state: PipelineState, names) -> None:
    missing = []
    for name in names:
        value = getattr(state, name)
        if value is None or (isinstance(value, dict) and not value):
            missing.append(name)
    if missing:
        raise DataError(
            "pipeline state is incomplete (missing "
            + ", ".join(missing)
            + "); run the offline pipeline first"
        )


# ---------------------------------------------------------------------------
# offline stages


def _stage_preprocess(state, art, config, train_csv, load_only):
    if load_only:
        state.train_set, _, floor_offset = load_cache(art.path("cache_train.bin"))
        state.val_set, _, _ = load_cache(art.path("cache_val.bin"))
        meta, blobs = read_container(art.path("fit.bin"), expect_kind="fit")
        state.floor_offset = int(meta["floor_offset"])
        state.scaler = CoordScaler.from_arrays(blobs)
        state.floor_codec = LabelCodec(blobs["floor_classes"])
        if meta["has_buildings"]:
            state.building_codec = LabelCodec(blobs["building_classes"])
        return
    if train_csv is None:
        raise DataError("preprocess stage needs the training survey CSV path")
    fset, floor_offset = preprocess_survey(train_csv, config.dataset)
    spids, _ = aggregate_sampling_points(fset)
    fset.spids[:] = spids
    train_idx, val_idx, held = split_by_sampling_point(spids, config.val_ratio, config.seed)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise DataError(
            f"{train_csv}: split left an empty side "
            f"(train {len(train_idx)}, validation {len(val_idx)} records)"
        )
    train_set = fset.subset(train_idx)
    val_set = fset.subset(val_idx)
    scaler = CoordScaler.fit(train_set.coords)
    floor_codec = LabelCodec(train_set.floors)
    building_codec = LabelCodec(train_set.buildings) if config.dataset.has_buildings else None

    save_cache(art.path("cache_train.bin"), train_set, config.dataset, floor_offset)
    save_cache(art.path("cache_val.bin"), val_set, config.dataset, floor_offset)
    blobs = dict(scaler.to_arrays())
    blobs["floor_classes"] = floor_codec.classes
    if building_codec is not None:
        blobs["building_classes"] = building_codec.classes
    blobs["train_idx"] = train_idx.astype(np.int64)
    blobs["val_idx"] = val_idx.astype(np.int64)
    blobs["held_points"] = held.astype(np.int64)
    meta = {
        "has_buildings": building_codec is not None,
        "floor_offset": int(floor_offset),
        "n_train": len(train_set),
        "n_val": len(val_set),
    }
    write_container(art.path("fit.bin"), "fit", meta, blobs)

    state.floor_offset = int(floor_offset)
    state.train_set = train_set
    state.val_set = val_set
    state.scaler = scaler
    state.floor_codec = floor_codec
    state.building_codec = building_codec


def _stage_build_graphs(state, art, config, train_csv, load_only):
    state.points = points_from_records(state.train_set)
    if load_only:
        state.g_train = deserialize_graph(art.path("graph_universal_train.bin"))
        state.g_val = deserialize_graph(art.path("graph_universal_val.bin"))
        return
    train = state.train_set
    val = state.val_set
    cfgk = _knn(config)
    g_train = build_graph(
        "train", train.features, train.spids, len(train),
        train.features, None, state.points, cfgk, config.seed,
    )
    val_feats = np.vstack([train.features, val.features])
    val_spids = np.concatenate([train.spids, val.spids])
    g_val = build_graph(
        "validation", val_feats, val_spids, len(train),
        train.features, val.features, state.points, cfgk, config.seed,
        train_pairs=g_train.edges,
    )
    serialize_graph(art.path("graph_universal_train.bin"), g_train)
    serialize_graph(art.path("graph_universal_val.bin"), g_val)
    state.g_train = g_train
    state.g_val = g_val


def _predict_store(state: PipelineState, graph) -> PredictionStore:
    """Deterministic coarse predictions at the graph's target rows."""
    rows = np.flatnonzero(graph.target_mask)
    coords = coarse_outputs(state.coarse_reg, graph)[rows]
    floor_logits, building_logits = coarse_outputs(state.coarse_cls, graph)
    floors = state.floor_codec.decode(predicted_classes(floor_logits[rows]))
    buildings = None
    if state.building_codec is not None:
        buildings = state.building_codec.decode(predicted_classes(building_logits[rows]))
    return PredictionStore(
        coords_std=np.asarray(coords, dtype=np.float64),
        floors=floors,
        buildings=buildings,
    )


def _coarse_val_metrics(state: PipelineState) -> dict:
    rows = np.flatnonzero(state.g_val.target_mask)
    coords = coarse_outputs(state.coarse_reg, state.g_val)[rows]
    xy = state.scaler.inverse(np.asarray(coords, dtype=np.float64))
    mle = float(location_errors(xy, state.val_set.coords).mean())
    floor_logits, building_logits = coarse_outputs(state.coarse_cls, state.g_val)
    true_floors = state.floor_codec.encode(state.val_set.floors)
    floor_acc = label_accuracy(predicted_classes(floor_logits[rows]), true_floors)
    out = {"coarse_val_mle": mle, "coarse_val_floor_accuracy": floor_acc}
    if state.building_codec is not None:
        true_b = state.building_codec.encode(state.val_set.buildings)
        out["coarse_val_building_accuracy"] = label_accuracy(
            predicted_classes(building_logits[rows]), true_b
        )
    return out


def _stage_train_coarse(state, art, config, train_csv, load_only):
    if load_only:
        state.coarse_reg, _ = load_checkpoint(
            art.path("coarse_regressor.bin"), expect_fingerprint=art.fingerprint
        )
        state.coarse_cls, _ = load_checkpoint(
            art.path("coarse_classifier.bin"), expect_fingerprint=art.fingerprint
        )
        state.val_store = PredictionStore.load(art.path("predictions_val.bin"))
        return
    train = state.train_set
    val = state.val_set
    ap = config.dataset.ap_count
    settings = config.train_settings()
    seed = config.seed

    reg = CoarseLocalizer(
        ap, "regression", hidden=config.hidden, mlp_hidden=config.mlp_hidden,
        dropout=config.dropout, slope=config.leaky_slope,
        seed=_sub_seed(seed, _SEED_REG_INIT),
    )
    y_std = state.scaler.transform(train.coords)
    reg_res = train_coarse_regressor(
        reg, state.g_train, y_std, state.g_val, val.coords, state.scaler,
        settings, _sub_seed(seed, _SEED_REG_TRAIN),
    )

    n_buildings = state.building_codec.n_classes if state.building_codec else None
    cls = CoarseLocalizer(
        ap, "classification", n_floors=state.floor_codec.n_classes,
        n_buildings=n_buildings, hidden=config.hidden, mlp_hidden=config.mlp_hidden,
        dropout=config.dropout, slope=config.leaky_slope,
        seed=_sub_seed(seed, _SEED_CLS_INIT),
    )
    floors = state.floor_codec.encode(train.floors)
    val_floors = state.floor_codec.encode(val.floors)
    buildings = val_buildings = None
    if state.building_codec is not None:
        buildings = state.building_codec.encode(train.buildings)
        val_buildings = state.building_codec.encode(val.buildings)
    cls_res = train_coarse_classifier(
        cls, state.g_train, floors, buildings, state.g_val, val_floors,
        val_buildings, settings, _sub_seed(seed, _SEED_CLS_TRAIN),
    )

    save_checkpoint(
        art.path("coarse_regressor.bin"), reg, config_fingerprint=art.fingerprint,
        seed=seed, extra_meta={"best_epoch": reg_res.best_epoch},
    )
    extra = {"phase1_best_epoch": cls_res.phase1.best_epoch}
    if cls_res.phase2 is not None:
        extra["phase2_best_epoch"] = cls_res.phase2.best_epoch
    save_checkpoint(
        art.path("coarse_classifier.bin"), cls, config_fingerprint=art.fingerprint,
        seed=seed, extra_meta=extra,
    )
    state.coarse_reg = reg
    state.coarse_cls = cls
    state.train_results["coarse_regressor"] = reg_res
    state.train_results["coarse_classifier"] = cls_res

    state.val_store = _predict_store(state, state.g_val)
    state.val_store.save(art.path("predictions_val.bin"))


def _stage_train_sfe(state, art, config, train_csv, load_only):
    if load_only:
        state.sfe_coord, _ = load_checkpoint(
            art.path("sfe_coord.bin"), expect_fingerprint=art.fingerprint
        )
        state.sfe_floor, _ = load_checkpoint(
            art.path("sfe_floor.bin"), expect_fingerprint=art.fingerprint
        )
        return
    train = state.train_set
    ap = config.dataset.ap_count
    settings = config.train_settings()
    seed = config.seed
    y_std = state.scaler.transform(train.coords)

    sfe_coord = StackedFeatureEncoder(
        ap, n_floors=None, n_layers=config.sfe_layers, aux_hidden=config.sfe_aux_hidden,
        dropout=config.dropout, slope=config.leaky_slope,
        seed=_sub_seed(seed, _SEED_SFE_COORD_INIT),
    )
    res_c = train_sfe(
        sfe_coord, train.features, y_std, None, settings,
        _sub_seed(seed, _SEED_SFE_COORD_TRAIN),
    )

    sfe_floor = StackedFeatureEncoder(
        ap, n_floors=state.floor_codec.n_classes, n_layers=config.sfe_layers,
        aux_hidden=config.sfe_aux_hidden, dropout=config.dropout,
        slope=config.leaky_slope, seed=_sub_seed(seed, _SEED_SFE_FLOOR_INIT),
    )
    floors = state.floor_codec.encode(train.floors)
    res_f = train_sfe(
        sfe_floor, train.features, y_std, floors, settings,
        _sub_seed(seed, _SEED_SFE_FLOOR_TRAIN),
    )

    save_checkpoint(art.path("sfe_coord.bin"), sfe_coord,
                    config_fingerprint=art.fingerprint, seed=seed)
    save_checkpoint(art.path("sfe_floor.bin"), sfe_floor,
                    config_fingerprint=art.fingerprint, seed=seed)
    state.sfe_coord = sfe_coord
    state.sfe_floor = sfe_floor
    state.train_results["sfe_coord"] = res_c
    state.train_results["sfe_floor"] = res_f


def _stage_build_multigraphs(state, art, config, train_csv, load_only):
    if load_only:
        for task in TASKS:
            g_rssi_t = deserialize_graph(art.path(f"graph_rssi_{task}_train.bin"))
            g_pos_t = deserialize_graph(art.path(f"graph_pos_{task}_train.bin"))
            g_rssi_v = deserialize_graph(art.path(f"graph_rssi_{task}_val.bin"))
            g_pos_v = deserialize_graph(art.path(f"graph_pos_{task}_val.bin"))
            state.hetero_train[task] = assemble_hetero_graph(g_rssi_t, g_pos_t)
            state.hetero_val[task] = assemble_hetero_graph(g_rssi_v, g_pos_v)
        return
    train = state.train_set
    val = state.val_set
    store = state.val_store
    cfgk = _knn(config)
    seed = config.seed
    val_feats = np.vstack([train.features, val.features])
    val_spids = np.concatenate([train.spids, val.spids])
    train_coords_std = state.scaler.transform(train.coords)

    for task in TASKS:
        sfe = state.sfe_coord if task == "coord" else state.sfe_floor
        t_train = sfe.transform(train.features)
        t_val = sfe.transform(val.features)
        rssi_points = points_from_records(train, feature_matrix=t_train)
        g_rssi_train = build_graph(
            "train", train.features, train.spids, len(train),
            t_train, None, rssi_points, cfgk, seed,
        )
        g_rssi_val = build_graph(
            "validation", val_feats, val_spids, len(train),
            t_train, t_val, rssi_points, cfgk, seed, train_pairs=g_rssi_train.edges,
        )
        pos_task = _POS_TASK[task]
        target_floors = store.floors if task == "floor" else None
        g_pos_train = build_pos_graph(
            "train", train.features, train.spids, len(train), train,
            train_coords_std, None, None, pos_task, cfgk, seed,
            floor_scale=config.floor_scale,
        )
        g_pos_val = build_pos_graph(
            "validation", val_feats, val_spids, len(train), train,
            train_coords_std, store.coords_std, target_floors, pos_task, cfgk,
            seed, floor_scale=config.floor_scale, train_pairs=g_pos_train.edges,
        )
        serialize_graph(art.path(f"graph_rssi_{task}_train.bin"), g_rssi_train)
        serialize_graph(art.path(f"graph_rssi_{task}_val.bin"), g_rssi_val)
        serialize_graph(art.path(f"graph_pos_{task}_train.bin"), g_pos_train)
        serialize_graph(art.path(f"graph_pos_{task}_val.bin"), g_pos_val)
        state.hetero_train[task] = assemble_hetero_graph(g_rssi_train, g_pos_train)
        state.hetero_val[task] = assemble_hetero_graph(g_rssi_val, g_pos_val)


def _parse_metric(raw: str):
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def _stage_train_hgnn(state, art, config, train_csv, load_only):
    if load_only:
        state.hgnn_coord, _ = load_checkpoint(
            art.path("hgnn_coord.bin"), expect_fingerprint=art.fingerprint
        )
        state.hgnn_floor, _ = load_checkpoint(
            art.path("hgnn_floor.bin"), expect_fingerprint=art.fingerprint
        )
        text = art.path("metrics_val.txt").read_text(encoding="utf-8")
        state.metrics = {k: _parse_metric(v) for k, v in parse_kv_text(text).items()}
        return
    train = state.train_set
    val = state.val_set
    ap = config.dataset.ap_count
    settings = config.train_settings()
    seed = config.seed
    y_std = state.scaler.transform(train.coords)
    floors = state.floor_codec.encode(train.floors)
    val_floors = state.floor_codec.encode(val.floors)

    hgnn_coord = HeteroGnn(
        ap, 2, hidden=config.hidden, mlp_hidden=config.mlp_hidden, mode="full",
        dropout=config.dropout, slope=config.leaky_slope,
        seed=_sub_seed(seed, _SEED_HGNN_COORD_INIT),
    )
    res_c = train_hgnn(
        hgnn_coord, state.hetero_train["coord"], y_std, "coords",
        state.hetero_val["coord"], val.coords, state.scaler, settings,
        _sub_seed(seed, _SEED_HGNN_COORD_TRAIN),
    )
    hgnn_floor = HeteroGnn(
        ap, state.floor_codec.n_classes, hidden=config.hidden,
        mlp_hidden=config.mlp_hidden, mode="full", dropout=config.dropout,
        slope=config.leaky_slope, seed=_sub_seed(seed, _SEED_HGNN_FLOOR_INIT),
    )
    res_f = train_hgnn(
        hgnn_floor, state.hetero_train["floor"], floors, "floor",
        state.hetero_val["floor"], val_floors, None, settings,
        _sub_seed(seed, _SEED_HGNN_FLOOR_TRAIN),
    )

    save_checkpoint(
        art.path("hgnn_coord.bin"), hgnn_coord, config_fingerprint=art.fingerprint,
        seed=seed, extra_meta={"best_epoch": res_c.best_epoch},
    )
    save_checkpoint(
        art.path("hgnn_floor.bin"), hgnn_floor, config_fingerprint=art.fingerprint,
        seed=seed, extra_meta={"best_epoch": res_f.best_epoch},
    )
    state.hgnn_coord = hgnn_coord
    state.hgnn_floor = hgnn_floor
    state.train_results["hgnn_coord"] = res_c
    state.train_results["hgnn_floor"] = res_f

    metrics = _coarse_val_metrics(state)
    metrics["hgnn_val_mle"] = res_c.best_metric
    metrics["hgnn_val_floor_accuracy"] = res_f.best_metric
    metrics["val_mle"] = res_c.best_metric
    metrics["val_floor_accuracy"] = res_f.best_metric
    if state.building_codec is not None:
        # final buildings come from the coarse classifier
        metrics["val_building_accuracy"] = metrics["coarse_val_building_accuracy"]
    metrics["n_train_records"] = len(train)
    metrics["n_val_records"] = len(val)
    metrics["n_floors"] = state.floor_codec.n_classes
    if state.building_codec is not None:
        metrics["n_buildings"] = state.building_codec.n_classes
    write_metrics(art.path("metrics_val.txt"), metrics)
    state.metrics = metrics


_STAGE_IMPL = {
    "preprocess": _stage_preprocess,
    "build-graphs": _stage_build_graphs,
    "train-coarse": _stage_train_coarse,
    "train-sfe": _stage_train_sfe,
    "build-multigraphs": _stage_build_multigraphs,
    "train-hgnn": _stage_train_hgnn,
}


def run_offline(config: PipelineConfig, train_csv, out_dir,
                resume: bool = True, until: str | None = None) -> PipelineState:
    """Run (or resume) the offline stages and return the populated state.

    ``until`` stops after the named stage, leaving later artifacts untouched.
    With ``resume`` a completed stage (per manifest hash) is loaded instead
    of recomputed; pass ``resume=False`` to force a full rebuild.
    """
    config.ensure_valid()
    if until is not None and until not in STAGE_ORDER:
        raise ValueError(f"unknown stage {until!r}; expected one of {STAGE_ORDER}")
    art = ArtifactDir(out_dir, config.fingerprint(), config.seed, resume=resume)
    config.save(art.path(CONFIG_SNAPSHOT))
    state = PipelineState(config=config, out_dir=Path(out_dir))
    for stage in STAGE_ORDER:
        impl = _STAGE_IMPL[stage]
        try:
            if resume and art.stage_complete(stage):
                impl(state, art, config, train_csv, load_only=True)
            else:
                impl(state, art, config, train_csv, load_only=False)
                art.record_stage(stage)
        except StageError:
            raise
        except Exception as err:
            raise StageError(stage, err) from err
        if stage == until:
            break
    return state


def load_state(out_dir, train_csv=None) -> PipelineState:
    """Rebuild PipelineState from a finished artifact directory."""
    cfg_path = Path(out_dir) / CONFIG_SNAPSHOT
    if not cfg_path.exists():
        raise DataError(f"{cfg_path}: no configuration snapshot; run the offline pipeline first")
    config = PipelineConfig.load(cfg_path)
    return run_offline(config, train_csv, out_dir, resume=True)


# ---------------------------------------------------------------------------
# online localization

_OFFLINE_FIELDS = (
    "train_set", "val_set", "scaler", "floor_codec", "points",
    "g_train", "g_val", "coarse_reg", "coarse_cls", "val_store",
    "sfe_coord", "sfe_floor", "hetero_train", "hetero_val",
)


def _check_online_set(state: PipelineState, online_set: FingerprintSet) -> None:
    ap = state.config.dataset.ap_count
    if online_set.features.shape[1] != ap:
        raise DataError(
            f"online records have {online_set.features.shape[1]} access points, "
            f"training state expects {ap}"
        )
    if len(online_set) == 0:
        raise DataError("online record set is empty")


def _online_universal(state: PipelineState, online_set: FingerprintSet):
    """Universal-graph coarse pass over online records: graph + predictions."""
    _check_online_set(state, online_set)
    train = state.train_set
    config = state.config
    node_feats = np.vstack([train.features, online_set.features])
    spids = np.concatenate(
        [train.spids, np.full(len(online_set), -1, dtype=np.int64)]
    )
    graph = build_graph(
        "online", node_feats, spids, len(train),
        train.features, online_set.features, state.points, _knn(config),
        config.seed, train_pairs=state.g_train.edges,
    )
    return graph, _predict_store(state, graph)


def _online_task_hetero(state: PipelineState, online_set: FingerprintSet,
                        store: PredictionStore, raw_rssi: bool = False) -> dict:
    """Task-directed online graphs; target positions come from ``store`` only.

    ``raw_rssi`` skips the encoders and builds the signal-space edges from
    preprocessed features directly (the train side then reuses the universal
    train edges, which were built in the same space).
    """
    train = state.train_set
    config = state.config
    cfgk = _knn(config)
    node_feats = np.vstack([train.features, online_set.features])
    spids = np.concatenate(
        [train.spids, np.full(len(online_set), -1, dtype=np.int64)]
    )
    train_coords_std = state.scaler.transform(train.coords)
    out = {}
    for task in TASKS:
        if raw_rssi:
            q_train, q_online = train.features, online_set.features
            rssi_points = state.points
            rssi_pairs = state.g_train.edges
        else:
            sfe = state.sfe_coord if task == "coord" else state.sfe_floor
            q_train = sfe.transform(train.features)
            q_online = sfe.transform(online_set.features)
            rssi_points = points_from_records(train, feature_matrix=q_train)
            rssi_pairs = state.hetero_train[task].rssi_edges
        g_rssi = build_graph(
            "online", node_feats, spids, len(train),
            q_train, q_online, rssi_points, cfgk, config.seed, train_pairs=rssi_pairs,
        )
        target_floors = store.floors if task == "floor" else None
        g_pos = build_pos_graph(
            "online", node_feats, spids, len(train), train, train_coords_std,
            store.coords_std, target_floors, _POS_TASK[task], cfgk, config.seed,
            floor_scale=config.floor_scale,
            train_pairs=state.hetero_train[task].pos_edges,
        )
        out[task] = assemble_hetero_graph(g_rssi, g_pos)
    return out


def _fit_online_adapter(state: PipelineState, online_set: FingerprintSet,
                        h_coord: HeteroGraph):
    """Input reweighting fitted on a seeded labeled fraction of online rows.

    Returns (adapter, picked record indices) so the unlabeled remainder can
    be scored on its own.
    """
    config = state.config
    n = len(online_set)
    count = min(n, max(1, round_half_up(config.adapter_fraction * n)))
    rng = np.random.default_rng([config.seed, SEED_STREAM, _SEED_ADAPTER_ROWS])
    pick = np.sort(rng.choice(n, size=count, replace=False))
    rows = np.flatnonzero(h_coord.target_mask)[pick]
    y_std = state.scaler.transform(online_set.coords[pick])
    adapter = OnlineAdapter(
        config.dataset.ap_count, full_matrix=config.adapter_full_matrix,
        seed=_sub_seed(config.seed, _SEED_ADAPTER_INIT),
    )
    train_adapter(
        adapter, state.hgnn_coord, h_coord, rows, y_std,
        config.train_settings(), _sub_seed(config.seed, _SEED_ADAPTER_TRAIN),
    )
    return adapter, pick


def run_online(state: PipelineState, online_set: FingerprintSet,
               use_adapter: bool = False) -> OnlineResult:
    """Localize unseen records against the frozen offline state.

    Buildings are the coarse classifier's outputs and final. Floors and
    coordinates are refined by the two-edge-type localizers over online
    graphs; coordinates are returned in original map units. Results do not
    depend on which records are co-submitted (no online-online edges and
    content-keyed member selection), so one-by-one equals batch.
    """
    _require(state, _OFFLINE_FIELDS + ("hgnn_coord", "hgnn_floor"))
    g_uni, store = _online_universal(state, online_set)
    hetero = _online_task_hetero(state, online_set, store)
    h_coord, h_floor = hetero["coord"], hetero["floor"]
    adapter, adapter_rows = (
        _fit_online_adapter(state, online_set, h_coord)
        if use_adapter else (None, None)
    )

    rows = np.flatnonzero(h_coord.target_mask)
    coords_std = hetero_outputs(state.hgnn_coord, h_coord, adapter)[rows]
    coords_std = np.asarray(coords_std, dtype=np.float64)
    xy = state.scaler.inverse(coords_std)
    floor_logits = hetero_outputs(state.hgnn_floor, h_floor)[rows]
    floor_classes = predicted_classes(floor_logits)
    floors = state.floor_codec.decode(floor_classes) - state.floor_offset
    return OnlineResult(
        longitude=xy[:, 0],
        latitude=xy[:, 1],
        floors=floors,
        buildings=store.buildings,
        coords_std=coords_std,
        floor_classes=floor_classes,
        provisional=store,
        universal_graph=g_uni,
        coord_graph=h_coord,
        floor_graph=h_floor,
        adapter=adapter,
        adapter_rows=adapter_rows,
    )


def evaluate_online(state: PipelineState, online_set: FingerprintSet,
                    result: OnlineResult) -> MetricsReport:
    """Score an online run against ground truth (truth in training floor space)."""
    true_floors = state.floor_codec.encode(online_set.floors)
    pred_xy = np.column_stack([result.longitude, result.latitude])
    pred_b = true_b = None
    if state.building_codec is not None and result.buildings is not None:
        pred_b = result.buildings
        true_b = online_set.buildings
    return build_report(
        pred_xy, online_set.coords, result.floor_classes, true_floors,
        state.floor_codec.n_classes, pred_buildings=pred_b, true_buildings=true_b,
    )


# ---------------------------------------------------------------------------
# ablations and baseline


def _substitute_edges(h: HeteroGraph, mode: str) -> HeteroGraph:
    """Duplicate one edge set into both views (pos_only keeps position edges)."""
    edges = h.pos_edges if mode == "pos_only" else h.rssi_edges
    return HeteroGraph(
        role=h.role, features=h.features, spids=h.spids,
        train_mask=h.train_mask, target_mask=h.target_mask,
        rssi_edges=edges, pos_edges=edges, k=h.k, n_records=h.n_records,
    )


def run_ablation(state: PipelineState, mode: str,
                 online_set: FingerprintSet | None = None) -> dict:
    """Retrain the two-edge-type localizers under one ablation mode.

    pos_only/rssi_only duplicate a single edge set into both views;
    shared_only/parallel_only drop the other model stage; no_sfe swaps the
    signal-space edges for ones built from untransformed features. Coarse
    models, encoders, and graphs in ``state`` are reused, never retrained.
    """
    if mode not in ABLATION_MODES:
        raise ValueError(f"unknown ablation mode {mode!r}; expected one of {ABLATION_MODES}")
    _require(state, _OFFLINE_FIELDS)
    config = state.config
    settings = config.train_settings()
    seed = config.seed
    ap = config.dataset.ap_count
    model_mode = mode if mode in ("shared_only", "parallel_only") else "full"

    ht = dict(state.hetero_train)
    hv = dict(state.hetero_val)
    if mode in ("pos_only", "rssi_only"):
        ht = {t: _substitute_edges(g, mode) for t, g in ht.items()}
        hv = {t: _substitute_edges(g, mode) for t, g in hv.items()}
    elif mode == "no_sfe":
        ht = {t: assemble_hetero_graph(state.g_train, ht[t].edge_view("pos")) for t in TASKS}
        hv = {t: assemble_hetero_graph(state.g_val, hv[t].edge_view("pos")) for t in TASKS}

    train = state.train_set
    val = state.val_set
    y_std = state.scaler.transform(train.coords)
    floors = state.floor_codec.encode(train.floors)
    val_floors = state.floor_codec.encode(val.floors)

    model_c = HeteroGnn(
        ap, 2, hidden=config.hidden, mlp_hidden=config.mlp_hidden, mode=model_mode,
        dropout=config.dropout, slope=config.leaky_slope,
        seed=_sub_seed(seed, _SEED_HGNN_COORD_INIT),
    )
    res_c = train_hgnn(
        model_c, ht["coord"], y_std, "coords", hv["coord"], val.coords,
        state.scaler, settings, _sub_seed(seed, _SEED_HGNN_COORD_TRAIN),
    )
    model_f = HeteroGnn(
        ap, state.floor_codec.n_classes, hidden=config.hidden,
        mlp_hidden=config.mlp_hidden, mode=model_mode, dropout=config.dropout,
        slope=config.leaky_slope, seed=_sub_seed(seed, _SEED_HGNN_FLOOR_INIT),
    )
    res_f = train_hgnn(
        model_f, ht["floor"], floors, "floor", hv["floor"], val_floors,
        None, settings, _sub_seed(seed, _SEED_HGNN_FLOOR_TRAIN),
    )
    metrics = {
        "mode": mode,
        "val_mle": res_c.best_metric,
        "val_floor_accuracy": res_f.best_metric,
    }
    if online_set is None:
        return metrics

    _, store = _online_universal(state, online_set)
    hetero_on = _online_task_hetero(state, online_set, store, raw_rssi=(mode == "no_sfe"))
    if mode in ("pos_only", "rssi_only"):
        hetero_on = {t: _substitute_edges(g, mode) for t, g in hetero_on.items()}
    rows = np.flatnonzero(hetero_on["coord"].target_mask)
    coords_std = np.asarray(
        hetero_outputs(model_c, hetero_on["coord"])[rows], dtype=np.float64
    )
    xy = state.scaler.inverse(coords_std)
    metrics["test_mle"] = float(location_errors(xy, online_set.coords).mean())
    floor_logits = hetero_outputs(model_f, hetero_on["floor"])[rows]
    true_floors = state.floor_codec.encode(online_set.floors)
    metrics["test_floor_accuracy"] = label_accuracy(
        predicted_classes(floor_logits), true_floors
    )
    if state.building_codec is not None and store.buildings is not None:
        metrics["test_building_accuracy"] = label_accuracy(
            store.buildings, online_set.buildings
        )
    return metrics


def run_baseline_graphsage(state: PipelineState,
                           online_set: FingerprintSet | None = None) -> dict:
    """Metrics of the single-graph localizer (the coarse models) for comparison.

    The coarse regressor/classifier already are the homogeneous baseline
    trained to completion on the universal graph, so they are evaluated
    directly rather than retrained.
    """
    _require(state, ("train_set", "val_set", "scaler", "floor_codec",
                     "points", "g_train", "g_val", "coarse_reg", "coarse_cls"))
    coarse = _coarse_val_metrics(state)
    metrics = {
        "val_mle": coarse["coarse_val_mle"],
        "val_floor_accuracy": coarse["coarse_val_floor_accuracy"],
    }
    if "coarse_val_building_accuracy" in coarse:
        metrics["val_building_accuracy"] = coarse["coarse_val_building_accuracy"]
    if online_set is None:
        return metrics
    _, store = _online_universal(state, online_set)
    xy = state.scaler.inverse(store.coords_std)
    metrics["test_mle"] = float(location_errors(xy, online_set.coords).mean())
    metrics["test_floor_accuracy"] = label_accuracy(store.floors, online_set.floors)
    if state.building_codec is not None and store.buildings is not None:
        metrics["test_building_accuracy"] = label_accuracy(
            store.buildings, online_set.buildings
        )
    return metrics
