"""Run configuration: dataset descriptor plus graph, model, training knobs.

One flat text file (key = value with [sections]) drives a whole run. The
canonical rendering is hashed into a fingerprint that artifact files embed,
so checkpoints and caches can refuse to mix across configurations.
"""

from __future__ import annotations

import dataclasses
import hashlib

from .dataset import DatasetDescriptor, builtin_descriptor
from .errors import ConfigError
from .kvtext import format_kv_text, load_kv_file, parse_kv_text
from .training import TrainSettings


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_tuple(raw: str) -> tuple:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def _format_int_tuple(value) -> str:
    return ",".join(str(int(v)) for v in value)


@dataclasses.dataclass
class PipelineConfig:
    dataset: DatasetDescriptor
    val_ratio: float = 0.10
    k: int = 4
    n_records: int = 1
    floor_scale: float = 2.0
    hidden: int = 256
    mlp_hidden: tuple = (64, 32)
    sfe_layers: int = 3
    sfe_aux_hidden: tuple = (64, 32)
    dropout: float = 0.5
    leaky_slope: float = 0.01
    lr: float = 0.0005
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    neighbor_cap: int = 4
    building_beta: float = 0.1
    l1_lambda: float = 1.0e-5
    sfe_epochs: int = 60
    adapter_lr: float = 0.01
    adapter_epochs: int = 150
    adapter_fraction: float = 0.10
    adapter_full_matrix: bool = False
    seed: int = 0

    def validate(self) -> list[str]:
        problems = list(self.dataset.validate())

        def check(cond, message):
            if not cond:
                problems.append(message)

        check(0.0 <= self.val_ratio < 1.0, f"graph.val_ratio must be in [0, 1), got {self.val_ratio}")
        check(self.k >= 1, f"graph.k must be at least 1, got {self.k}")
        check(self.n_records >= 1, f"graph.n_records must be at least 1, got {self.n_records}")
        check(self.floor_scale >= 0.0, f"graph.floor_scale must be non-negative, got {self.floor_scale}")
        check(self.hidden >= 1, f"model.hidden must be at least 1, got {self.hidden}")
        check(
            len(self.mlp_hidden) >= 1 and all(h >= 1 for h in self.mlp_hidden),
            f"model.mlp_hidden needs positive widths, got {self.mlp_hidden}",
        )
        check(self.sfe_layers >= 1, f"model.sfe_layers must be at least 1, got {self.sfe_layers}")
        check(
            len(self.sfe_aux_hidden) >= 1 and all(h >= 1 for h in self.sfe_aux_hidden),
            f"model.sfe_aux_hidden needs positive widths, got {self.sfe_aux_hidden}",
        )
        check(0.0 <= self.dropout < 1.0, f"model.dropout must be in [0, 1), got {self.dropout}")
        check(self.leaky_slope >= 0.0, f"model.leaky_slope must be non-negative, got {self.leaky_slope}")
        check(self.lr > 0.0, f"train.lr must be positive, got {self.lr}")
        check(self.batch_size >= 0, f"train.batch_size must be non-negative, got {self.batch_size}")
        check(self.max_epochs >= 1, f"train.max_epochs must be at least 1, got {self.max_epochs}")
        check(self.patience >= 1, f"train.patience must be at least 1, got {self.patience}")
        check(self.neighbor_cap >= 1, f"train.neighbor_cap must be at least 1, got {self.neighbor_cap}")
        check(
            0.0 <= self.building_beta <= 1.0,
            f"train.building_beta must be in [0, 1], got {self.building_beta}",
        )
        check(self.l1_lambda >= 0.0, f"train.l1_lambda must be non-negative, got {self.l1_lambda}")
        check(self.sfe_epochs >= 1, f"train.sfe_epochs must be at least 1, got {self.sfe_epochs}")
        check(self.adapter_lr > 0.0, f"train.adapter_lr must be positive, got {self.adapter_lr}")
        check(
            self.adapter_epochs >= 1,
            f"train.adapter_epochs must be at least 1, got {self.adapter_epochs}",
        )
        check(
            0.0 < self.adapter_fraction <= 1.0,
            f"train.adapter_fraction must be in (0, 1], got {self.adapter_fraction}",
        )
        check(self.seed >= 0, f"run.seed must be non-negative, got {self.seed}")
        return problems

    def ensure_valid(self) -> "PipelineConfig":
        problems = self.validate()
        if problems:
            raise ConfigError(problems)
        return self

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            lr=self.lr,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            neighbor_cap=self.neighbor_cap,
            building_beta=self.building_beta,
            l1_lambda=self.l1_lambda,
            sfe_epochs=self.sfe_epochs,
            adapter_lr=self.adapter_lr,
            adapter_epochs=self.adapter_epochs,
        )

    def to_pairs(self) -> dict:
        pairs = dict(self.dataset.to_pairs())
        for key, attr, _, fmt in _FIELDS:
            pairs[key] = fmt(getattr(self, attr))
        return pairs

    def to_text(self) -> str:
        return format_kv_text(self.to_pairs())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_pairs(cls, pairs: dict) -> "PipelineConfig":
        problems = []
        try:
            dataset = DatasetDescriptor.from_pairs(pairs)
        except ConfigError as err:
            problems.extend(err.problems)
            dataset = None
        kwargs = {}
        known = {key: (attr, parse) for key, attr, parse, _ in _FIELDS}
        for key, raw in pairs.items():
            if key.startswith("dataset."):
                continue
            if key not in known:
                problems.append(f"unknown config key {key!r}")
                continue
            attr, parse = known[key]
            try:
                kwargs[attr] = parse(raw)
            except ValueError:
                problems.append(f"{key}: cannot parse {raw!r}")
        if problems:
            raise ConfigError(problems)
        config = cls(dataset=dataset, **kwargs)
        return config.ensure_valid()

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        return cls.from_pairs(parse_kv_text(text))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_pairs(load_kv_file(path))


_FIELDS = [
    ("graph.val_ratio", "val_ratio", float, str),
    ("graph.k", "k", int, str),
    ("graph.n_records", "n_records", int, str),
    ("graph.floor_scale", "floor_scale", float, str),
    ("model.hidden", "hidden", int, str),
    ("model.mlp_hidden", "mlp_hidden", _parse_int_tuple, _format_int_tuple),
    ("model.sfe_layers", "sfe_layers", int, str),
    ("model.sfe_aux_hidden", "sfe_aux_hidden", _parse_int_tuple, _format_int_tuple),
    ("model.dropout", "dropout", float, str),
    ("model.leaky_slope", "leaky_slope", float, str),
    ("train.lr", "lr", float, str),
    ("train.batch_size", "batch_size", int, str),
    ("train.max_epochs", "max_epochs", int, str),
    ("train.patience", "patience", int, str),
    ("train.neighbor_cap", "neighbor_cap", int, str),
    ("train.building_beta", "building_beta", float, str),
    ("train.l1_lambda", "l1_lambda", float, str),
    ("train.sfe_epochs", "sfe_epochs", int, str),
    ("train.adapter_lr", "adapter_lr", float, str),
    ("train.adapter_epochs", "adapter_epochs", int, str),
    ("train.adapter_fraction", "adapter_fraction", float, str),
    ("train.adapter_full_matrix", "adapter_full_matrix", _parse_bool, lambda v: str(bool(v))),
    ("run.seed", "seed", int, str),
]


def default_config(dataset_name: str) -> PipelineConfig:
    """Config preset for one of the built-in survey descriptors."""
    return PipelineConfig(dataset=builtin_descriptor(dataset_name))
