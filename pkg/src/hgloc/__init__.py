"""Indoor Wi-Fi RSSI fingerprint localization with heterogeneous graph networks.

The package is organized bottom-up:

``numeric``
    Reverse-mode autodiff over numpy arrays: parameters, dense and
    sparse-aggregation ops, losses, SGD with gradient clipping.
``dataset``
    Survey CSV loading, RSSI normalization, sampling-point aware
    train/validation splitting, coordinate and label codecs.
``graph``
    K-nearest-neighbor graph construction in signal and position space,
    sampling-point exclusion rules, heterogeneous multi-graph assembly,
    byte-stable serialization.
``models``
    The coarse localizer, the stacked feature encoder, the two-branch
    heterogeneous GNN, the online input adapter, checkpoint I/O.
``training``
    Minibatch loops with early stopping and divergence detection.
``pipeline``
    The staged offline run (resumable via a manifest), online
    localization, ablations and the single-graph baseline.
``evaluation``
    Location error metrics, floor/building accuracy, report assembly.
``cli``
    The ``hgloc`` command with one subcommand per stage plus
    ``pipeline``, ``predict``, ``evaluate``, ``ablate``, ``baseline``.

The names most callers need are re-exported here.
"""

from .config import PipelineConfig, default_config
from .dataset import (
    CoordScaler,
    DatasetDescriptor,
    FingerprintSet,
    LabelCodec,
    builtin_descriptor,
    load_survey,
    preprocess_survey,
    split_by_sampling_point,
)
from .errors import (
    ConfigError,
    DataError,
    HglocError,
    StageError,
    TrainingDivergedError,
)
from .evaluation import (
    MetricsReport,
    build_report,
    label_accuracy,
    location_errors,
    mean_location_error,
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
    nearest_points,
    serialize_graph,
)
from .models import (
    CoarseLocalizer,
    HeteroGnn,
    OnlineAdapter,
    StackedFeatureEncoder,
    load_checkpoint,
    save_checkpoint,
)
from .pipeline import (
    ABLATION_MODES,
    STAGE_ORDER,
    OnlineResult,
    PipelineState,
    PredictionStore,
    evaluate_online,
    load_state,
    run_ablation,
    run_baseline_graphsage,
    run_offline,
    run_online,
)
from .synthetic import SyntheticWorld
from .training import ClassifierResult, TrainResult, TrainSettings

__version__ = "0.1.0"

__all__ = [
    "ABLATION_MODES",
    "STAGE_ORDER",
    "ClassifierResult",
    "ConfigError",
    "CoordScaler",
    "CoarseLocalizer",
    "DataError",
    "DatasetDescriptor",
    "FingerGraph",
    "FingerprintSet",
    "HeteroGnn",
    "HeteroGraph",
    "HglocError",
    "KnnConfig",
    "LabelCodec",
    "MetricsReport",
    "OnlineAdapter",
    "OnlineResult",
    "PipelineConfig",
    "PipelineState",
    "PredictionStore",
    "StackedFeatureEncoder",
    "StageError",
    "SyntheticWorld",
    "TrainResult",
    "TrainSettings",
    "TrainingDivergedError",
    "aggregate_sampling_points",
    "assemble_hetero_graph",
    "build_graph",
    "build_pos_graph",
    "build_report",
    "builtin_descriptor",
    "default_config",
    "deserialize_graph",
    "evaluate_online",
    "label_accuracy",
    "load_checkpoint",
    "load_state",
    "load_survey",
    "location_errors",
    "mean_location_error",
    "nearest_points",
    "preprocess_survey",
    "run_ablation",
    "run_baseline_graphsage",
    "run_offline",
    "run_online",
    "save_checkpoint",
    "serialize_graph",
    "split_by_sampling_point",
]
