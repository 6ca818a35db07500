"""Random fingerprint-world instances shared by graph and acceptance tests."""

import numpy as np

from hgloc.dataset import FingerprintSet
from hgloc.graph import (
    KnnConfig,
    aggregate_sampling_points,
    build_graph,
    points_from_records,
)


def oracle_nearest_points(query, qspid, points, k):
    """Exhaustive-sort reference for the constrained point search.

    Computes every pairwise distance directly, sorts by (distance, spid),
    takes k+1, removes the query's own point when its spid is valid, and
    keeps the first k. Deliberately shares no code with the implementation.
    """
    dists = [float(np.sqrt(((query - p) ** 2).sum())) for p in points.features]
    order = sorted(range(len(points)), key=lambda s: (dists[s], int(points.spids[s])))
    top = order[: k + 1]
    if qspid >= 0:
        top = [s for s in top if points.spids[s] != qspid]
    return top[:k]


def random_world(rng, n_points=None, max_records=4, ap_count=6, duplicate_features=False):
    """A small survey with exact repeated positions per sampling point."""
    if n_points is None:
        n_points = int(rng.integers(8, 40))
    rows = []
    for _ in range(n_points):
        pos = (
            float(np.round(rng.uniform(0, 100), 3)),
            float(np.round(rng.uniform(0, 100), 3)),
            int(rng.integers(0, 4)),
            int(rng.integers(0, 2)),
        )
        base = rng.uniform(0.05, 1.0, size=ap_count)
        for _ in range(int(rng.integers(1, max_records + 1))):
            feat = np.clip(base + rng.normal(0, 0.02, size=ap_count), 0.01, 1.0)
            rows.append((pos, feat))
    if duplicate_features and len(rows) >= 2:
        rows[1] = (rows[1][0], rows[0][1].copy())  # exact feature tie across points
    rng.shuffle(rows)
    fset = FingerprintSet(
        features=np.array([r[1] for r in rows], dtype=np.float32),
        lon=np.array([r[0][0] for r in rows]),
        lat=np.array([r[0][1] for r in rows]),
        floors=np.array([r[0][2] for r in rows], dtype=np.int64),
        buildings=np.array([r[0][3] for r in rows], dtype=np.int64),
        spids=np.full(len(rows), -1, dtype=np.int64),
    )
    spids, _ = aggregate_sampling_points(fset)
    fset.spids[:] = spids
    return fset


def random_graph_instance(rng, role="train"):
    """Build one graph of the requested role from a fresh random world."""
    fset = random_world(rng)
    cfg = KnnConfig(k=int(rng.integers(1, 5)), n_records=int(rng.integers(1, 3)))
    point_ids = np.unique(fset.spids)
    if len(point_ids) < cfg.k + 2:
        cfg.k = max(1, len(point_ids) - 2)
    seed = int(rng.integers(0, 2**31))
    if role == "train":
        points = points_from_records(fset)
        return build_graph(
            "train", fset.features, fset.spids, len(fset),
            fset.features, None, points, cfg, seed,
        ), fset, cfg
    # hold out some points as targets
    held = rng.choice(point_ids, size=max(1, len(point_ids) // 5), replace=False)
    is_target = np.isin(fset.spids, held)
    train = fset.subset(~is_target)
    target = fset.subset(is_target)
    points = points_from_records(train)
    if len(points) < cfg.k + 1:
        cfg.k = len(points) - 1
    node_features = np.concatenate([train.features, target.features])
    spids = np.concatenate(
        [train.spids, target.spids if role == "validation" else np.full(len(target), -1)]
    )
    graph = build_graph(
        role, node_features, spids, len(train),
        train.features, target.features, points, cfg, seed,
    )
    return graph, fset, cfg
