"""Synthetic multi-building survey generator.

Emits CSV surveys shaped like the public fingerprint datasets (AP columns
first, then longitude/latitude/floor/building) from a log-distance path-loss
model, so preprocessing, graphs, training, and the CLI can be exercised end
to end without the real data. Signal strength decays with 3D distance plus a
per-floor penalty, weak readings fall below a detection threshold and become
the missing-value sentinel, and every sampling point is surveyed several
times with fresh noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .dataset import DatasetDescriptor

WORLD_STREAM = 0xB117
SURVEY_STREAM = 0x5A3E


@dataclass
class WorldConfig:
    n_buildings: int = 2
    n_floors: int = 3
    aps_per_floor: int = 4
    building_width: float = 40.0
    building_depth: float = 40.0
    building_gap: float = 40.0
    floor_height: float = 3.5
    tx_power: float = -30.0
    path_loss_exponent: float = 3.0
    floor_penalty_db: float = 14.0
    detect_threshold: float = -95.0
    noise_db: float = 1.5
    rssi_min: float = -104.0
    rssi_cap: float = -20.0
    sentinel: float = 100.0


class SyntheticWorld:
    """Fixed AP layout; each survey draws fresh sampling points and noise."""

    def __init__(self, config: WorldConfig | None = None, seed: int = 0):
        self.config = config or WorldConfig()
        self.seed = int(seed)
        c = self.config
        rng = np.random.default_rng([self.seed, WORLD_STREAM])
        xyz = []
        floors = []
        for b in range(c.n_buildings):
            x0 = b * (c.building_width + c.building_gap)
            for f in range(c.n_floors):
                for _ in range(c.aps_per_floor):
                    xyz.append(
                        [
                            x0 + rng.uniform(2.0, c.building_width - 2.0),
                            rng.uniform(2.0, c.building_depth - 2.0),
                            f * c.floor_height + 2.0,
                        ]
                    )
                    floors.append(f)
        self.ap_xyz = np.array(xyz, dtype=np.float64)
        self.ap_floor = np.array(floors, dtype=np.int64)

    @property
    def ap_count(self) -> int:
        return len(self.ap_xyz)

    def descriptor(self, with_buildings: bool = True) -> DatasetDescriptor:
        return DatasetDescriptor(
            name="synthetic",
            ap_count=self.ap_count,
            building_col="BUILDINGID" if with_buildings else "",
        )

    def _rssi(self, pos_xyz, floor, rng):
        """One record's readings: path loss + floor penalty + noise."""
        c = self.config
        d = np.sqrt(((pos_xyz - self.ap_xyz) ** 2).sum(axis=1))
        level = c.tx_power - 10.0 * c.path_loss_exponent * np.log10(np.maximum(d, 1.0))
        level -= c.floor_penalty_db * np.abs(self.ap_floor - floor)
        level += rng.normal(0.0, c.noise_db, size=self.ap_count)
        heard = level >= c.detect_threshold
        out = np.full(self.ap_count, c.sentinel)
        out[heard] = np.clip(np.rint(level[heard]), c.rssi_min, c.rssi_cap)
        return out

    def survey_frame(
        self, points_per_floor: int = 10, records=(2, 4), seed: int = 1
    ) -> pd.DataFrame:
        """Survey with fresh sampling points; rows shuffled like a field dump."""
        c = self.config
        rng = np.random.default_rng([self.seed, SURVEY_STREAM, int(seed)])
        lo, hi = records
        rows = []
        for b in range(c.n_buildings):
            x0 = b * (c.building_width + c.building_gap)
            for f in range(c.n_floors):
                for _ in range(points_per_floor):
                    lon = round(float(rng.uniform(x0, x0 + c.building_width)), 3)
                    lat = round(float(rng.uniform(0.0, c.building_depth)), 3)
                    pos = np.array([lon, lat, f * c.floor_height + 1.2])
                    for _ in range(int(rng.integers(lo, hi + 1))):
                        rows.append((self._rssi(pos, f, rng), lon, lat, f, b))
        rng.shuffle(rows)
        data = {
            f"WAP{i + 1:03d}": np.array([r[0][i] for r in rows]) for i in range(self.ap_count)
        }
        data["LONGITUDE"] = np.array([r[1] for r in rows])
        data["LATITUDE"] = np.array([r[2] for r in rows])
        data["FLOOR"] = np.array([r[3] for r in rows], dtype=np.int64)
        data["BUILDINGID"] = np.array([r[4] for r in rows], dtype=np.int64)
        return pd.DataFrame(data)

    def write_survey(self, path, points_per_floor: int = 10, records=(2, 4), seed: int = 1):
        frame = self.survey_frame(points_per_floor, records, seed)
        frame.to_csv(path, index=False)
        return path
