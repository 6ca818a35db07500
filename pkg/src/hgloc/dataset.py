"""Fingerprint dataset ingestion and preprocessing.

A fingerprint survey is a CSV with one row per scan: per-AP RSSI columns plus
longitude, latitude, floor, and building labels. A DatasetDescriptor captures
everything format-specific (column naming, the not-detected sentinel, the
valid RSSI range) so new surveys are a config edit rather than a code change.

Preprocessing maps RSSI into [0, 1] with the sentinel pinned exactly to 0,
standardizes coordinates with statistics fitted on training records only, and
shifts floor labels to be non-negative.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .kvtext import format_kv_text, load_kv_file
from .serialize import read_container, write_container

SPLIT_STREAM = 0x5F17  # seed-domain tag for the validation split


@dataclasses.dataclass
class DatasetDescriptor:
    """Format description for one fingerprint survey."""

    name: str
    ap_count: int
    missing_sentinel: float = 100.0
    rssi_min: float = -104.0
    rssi_max: float = 0.0
    ap_prefix: str = "WAP"
    lon_col: str = "LONGITUDE"
    lat_col: str = "LATITUDE"
    floor_col: str = "FLOOR"
    building_col: str = "BUILDINGID"  # empty string: no building labels (constant 0)

    def validate(self) -> list[str]:
        problems = []
        if self.ap_count <= 0:
            problems.append(f"dataset.ap_count must be positive, got {self.ap_count}")
        if self.rssi_min >= self.rssi_max:
            problems.append(
                f"dataset.rssi_min ({self.rssi_min}) must be below "
                f"dataset.rssi_max ({self.rssi_max})"
            )
        if self.rssi_min <= self.missing_sentinel <= self.rssi_max:
            problems.append(
                "dataset.missing_sentinel must lie outside the valid RSSI range"
            )
        if not self.ap_prefix:
            problems.append("dataset.ap_prefix must be non-empty")
        for field in ("lon_col", "lat_col", "floor_col"):
            if not getattr(self, field):
                problems.append(f"dataset.{field} must be non-empty")
        return problems

    @property
    def has_buildings(self) -> bool:
        return bool(self.building_col)

    def to_pairs(self) -> dict:
        pairs = {}
        for field in dataclasses.fields(self):
            pairs[f"dataset.{field.name}"] = str(getattr(self, field.name))
        return pairs

    @classmethod
    def from_pairs(cls, pairs: dict) -> "DatasetDescriptor":
        kwargs = {}
        problems = []
        known = {f.name: f.type for f in dataclasses.fields(cls)}
        for field in known:
            key = f"dataset.{field}"
            if key not in pairs:
                continue
            raw = pairs[key]
            try:
                if field == "ap_count":
                    kwargs[field] = int(raw)
                elif field in ("missing_sentinel", "rssi_min", "rssi_max"):
                    kwargs[field] = float(raw)
                else:
                    kwargs[field] = raw
            except ValueError:
                problems.append(f"{key}: cannot parse {raw!r}")
        if "name" not in kwargs:
            problems.append("dataset.name is required")
        if "ap_count" not in kwargs and not problems:
            problems.append("dataset.ap_count is required")
        if problems:
            raise ConfigError(problems)
        desc = cls(**kwargs)
        problems = desc.validate()
        if problems:
            raise ConfigError(problems)
        return desc


def builtin_descriptor(name: str) -> DatasetDescriptor:
    """Descriptors for the two public surveys this package targets."""
    if name == "uji":
        return DatasetDescriptor(name="uji", ap_count=520)
    if name == "uts":
        # single building: no building column, head disabled downstream
        return DatasetDescriptor(name="uts", ap_count=589, building_col="")
    raise ConfigError([f"unknown builtin dataset {name!r} (expected 'uji' or 'uts')"])


def save_descriptor(desc: DatasetDescriptor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_kv_text(desc.to_pairs()))


def load_descriptor(path) -> DatasetDescriptor:
    return DatasetDescriptor.from_pairs(load_kv_file(path))


@dataclasses.dataclass
class FingerprintSet:
    """Columnar container for preprocessed fingerprint records.

    features   float32 [N, A], RSSI mapped into [0, 1]
    lon/lat    float64 [N], original map units (meters for the target surveys)
    floors     int64 [N], after non-negative offset
    buildings  int64 [N]
    spids      int64 [N], sampling-point ids; -1 until assigned
    """

    features: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    floors: np.ndarray
    buildings: np.ndarray
    spids: np.ndarray

    def __post_init__(self):
        n = len(self.features)
        for field in ("lon", "lat", "floors", "buildings", "spids"):
            if len(getattr(self, field)) != n:
                raise DataError(f"fingerprint set column {field!r} length mismatch")

    def __len__(self):
        return len(self.features)

    @property
    def coords(self) -> np.ndarray:
        return np.stack([self.lon, self.lat], axis=1)

    def subset(self, idx) -> "FingerprintSet":
        return FingerprintSet(
            features=self.features[idx],
            lon=self.lon[idx],
            lat=self.lat[idx],
            floors=self.floors[idx],
            buildings=self.buildings[idx],
            spids=self.spids[idx],
        )


def _numeric_column(df: pd.DataFrame, col: str, path) -> np.ndarray:
    values = pd.to_numeric(df[col], errors="coerce")
    bad = values.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(
            f"{path}: non-numeric or empty cell in column {col!r} at record {row}"
        )
    return values.to_numpy(dtype=np.float64)


def _integral_column(df: pd.DataFrame, col: str, path) -> np.ndarray:
    values = _numeric_column(df, col, path)
    if not np.all(values == np.round(values)):
        row = int(np.flatnonzero(values != np.round(values))[0])
        raise DataError(f"{path}: non-integer label in column {col!r} at record {row}")
    return values.astype(np.int64)


def load_survey(path, desc: DatasetDescriptor):
    """Read a survey CSV into raw arrays (no normalization yet).

    Returns (rssi [N, A] float64, lon, lat, floors, buildings). Raises
    DataError for missing columns, non-numeric cells, or an empty file.
    """
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: empty file") from None
    if len(df) == 0:
        raise DataError(f"{path}: no records")

    ap_cols = [c for c in df.columns if c.startswith(desc.ap_prefix)]
    if len(ap_cols) != desc.ap_count:
        raise DataError(
            f"{path}: found {len(ap_cols)} '{desc.ap_prefix}*' columns, "
            f"descriptor expects {desc.ap_count}"
        )
    needed = [desc.lon_col, desc.lat_col, desc.floor_col]
    if desc.has_buildings:
        needed.append(desc.building_col)
    for col in needed:
        if col not in df.columns:
            raise DataError(f"{path}: missing required column {col!r}")

    rssi = np.column_stack([_numeric_column(df, c, path) for c in ap_cols])
    lon = _numeric_column(df, desc.lon_col, path)
    lat = _numeric_column(df, desc.lat_col, path)
    floors = _integral_column(df, desc.floor_col, path)
    if desc.has_buildings:
        buildings = _integral_column(df, desc.building_col, path)
    else:
        buildings = np.zeros(len(df), dtype=np.int64)
    return rssi, lon, lat, floors, buildings


def normalize_rssi(rssi: np.ndarray, desc: DatasetDescriptor) -> np.ndarray:
    """Map RSSI into [0, 1] with the not-detected sentinel pinned to 0.0.

    Sentinel readings are first replaced by rssi_min - 1, then the whole
    matrix is shifted/scaled so rssi_min - 1 -> 0 and rssi_max -> 1. Values
    outside [rssi_min, rssi_max] that are not the sentinel are rejected, not
    clamped.
    """
    rssi = np.asarray(rssi, dtype=np.float64)
    is_sentinel = rssi == desc.missing_sentinel
    out_of_range = ~is_sentinel & ((rssi < desc.rssi_min) | (rssi > desc.rssi_max))
    if out_of_range.any():
        r, c = (int(v[0]) for v in np.nonzero(out_of_range))
        raise DataError(
            f"RSSI value {rssi[r, c]} at record {r}, AP column {c} is outside "
            f"[{desc.rssi_min}, {desc.rssi_max}] and is not the sentinel "
            f"{desc.missing_sentinel}"
        )
    floor_val = desc.rssi_min - 1.0
    shifted = np.where(is_sentinel, floor_val, rssi)
    scale = desc.rssi_max - floor_val
    return ((shifted - floor_val) / scale).astype(np.float32)


def offset_floors(floors: np.ndarray) -> tuple[np.ndarray, int]:
    """Shift floor labels so the minimum is 0; already-non-negative sets pass
    through unchanged (idempotent)."""
    floors = np.asarray(floors, dtype=np.int64)
    lowest = int(floors.min())
    offset = -lowest if lowest < 0 else 0
    return floors + offset, offset


class CoordScaler:
    """Per-axis standardization with population statistics (ddof=0)."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, coords: np.ndarray) -> "CoordScaler":
        coords = np.asarray(coords, dtype=np.float64)
        mean = coords.mean(axis=0)
        std = coords.std(axis=0)  # population std
        if np.any(std == 0):
            axis = int(np.flatnonzero(std == 0)[0])
            raise DataError(
                f"degenerate coordinate scaler: axis {axis} has zero variance"
            )
        return cls(mean, std)

    def transform(self, coords: np.ndarray) -> np.ndarray:
        return (np.asarray(coords, dtype=np.float64) - self.mean) / self.std

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=np.float64) * self.std + self.mean

    def to_arrays(self) -> dict:
        return {"scaler_mean": self.mean, "scaler_std": self.std}

    @classmethod
    def from_arrays(cls, blobs: dict) -> "CoordScaler":
        return cls(blobs["scaler_mean"], blobs["scaler_std"])


class LabelCodec:
    """Dense class indices for the integer labels observed in training data."""

    def __init__(self, observed):
        self.classes = np.unique(np.asarray(observed, dtype=np.int64))
        self._index = {int(c): i for i, c in enumerate(self.classes)}

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def encode(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        out = np.empty(labels.shape, dtype=np.int64)
        for i, lab in enumerate(labels.ravel()):
            if int(lab) not in self._index:
                raise DataError(f"label {int(lab)} was not observed in training data")
            out.ravel()[i] = self._index[int(lab)]
        return out

    def decode(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) and (idx.min() < 0 or idx.max() >= self.n_classes):
            raise DataError("class index out of range for label codec")
        return self.classes[idx]


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_by_sampling_point(spids: np.ndarray, ratio: float, seed: int):
    """Hold out round(ratio * #points) sampling points for validation.

    Selection is uniform over distinct SPIDs under the given seed; every
    record of a held-out point moves to validation, so no point straddles
    the boundary. Returns (train_idx, val_idx, held_point_ids).
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError([f"validation ratio must be in [0, 1), got {ratio}"])
    spids = np.asarray(spids, dtype=np.int64)
    if np.any(spids < 0):
        raise DataError("all records need sampling-point ids before splitting")
    points = np.unique(spids)
    count = round_half_up(ratio * len(points))
    rng = np.random.default_rng([seed, SPLIT_STREAM])
    held = np.sort(rng.choice(points, size=count, replace=False))
    is_val = np.isin(spids, held)
    return np.flatnonzero(~is_val), np.flatnonzero(is_val), held


def preprocess_survey(path, desc: DatasetDescriptor, floor_offset: int | None = None):
    """Load + normalize a survey CSV into a FingerprintSet.

    If ``floor_offset`` is None it is derived from this file's floors;
    otherwise the given offset is applied (test files reuse the training
    offset). Returns (set, floor_offset).
    """
    rssi, lon, lat, floors, buildings = load_survey(path, desc)
    features = normalize_rssi(rssi, desc)
    if floor_offset is None:
        floors, floor_offset = offset_floors(floors)
    else:
        floors = floors + floor_offset
    fset = FingerprintSet(
        features=features,
        lon=lon,
        lat=lat,
        floors=floors,
        buildings=buildings,
        spids=np.full(len(lon), -1, dtype=np.int64),
    )
    return fset, floor_offset


def save_cache(path, fset: FingerprintSet, desc: DatasetDescriptor, floor_offset: int):
    """Persist a preprocessed set as manifest + raw little-endian blobs."""
    meta = {
        "descriptor": {k.split(".", 1)[1]: v for k, v in desc.to_pairs().items()},
        "floor_offset": int(floor_offset),
    }
    write_container(
        path,
        "dataset-cache",
        meta,
        {
            "features": fset.features.astype(np.float32),
            "lon": fset.lon.astype(np.float64),
            "lat": fset.lat.astype(np.float64),
            "floors": fset.floors.astype(np.int64),
            "buildings": fset.buildings.astype(np.int64),
            "spids": fset.spids.astype(np.int64),
        },
    )


def load_cache(path):
    """Inverse of save_cache; returns (set, descriptor, floor_offset)."""
    meta, blobs = read_container(path, expect_kind="dataset-cache")
    pairs = {f"dataset.{k}": v for k, v in meta["descriptor"].items()}
    desc = DatasetDescriptor.from_pairs(pairs)
    fset = FingerprintSet(
        features=blobs["features"],
        lon=blobs["lon"],
        lat=blobs["lat"],
        floors=blobs["floors"],
        buildings=blobs["buildings"],
        spids=blobs["spids"],
    )
    return fset, desc, int(meta["floor_offset"])
