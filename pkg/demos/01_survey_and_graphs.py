"""From raw survey CSV to fingerprint graphs.

Walks the data path one step at a time: load and normalize the survey,
group records into sampling points, split train/validation by point, and
build the two graphs the localizers train on. Prints the structural facts
that make the split inductive: validation records never connect to each
other, and no edge joins two records taken at the same spot.
"""

import numpy as np

from hgloc.dataset import (
    CoordScaler,
    preprocess_survey,
    split_by_sampling_point,
)
from hgloc.graph import (
    KnnConfig,
    aggregate_sampling_points,
    build_graph,
    points_from_records,
)

from common import OUT_ROOT, banner, demo_surveys


def main():
    out = OUT_ROOT / "01_survey"
    world, train_csv, _ = demo_surveys(out)

    banner("1. Load and normalize the survey")
    fset, floor_offset = preprocess_survey(train_csv, world.descriptor())
    print(f"records: {len(fset)}  access points: {fset.features.shape[1]}")
    print(f"RSSI normalized into [0, 1]; floor labels shifted by {floor_offset}")
    print(f"feature range: [{fset.features.min():.3f}, {fset.features.max():.3f}]")

    banner("2. Group records into sampling points")
    spids, points = aggregate_sampling_points(fset)
    fset.spids[:] = spids
    sizes = np.bincount(spids)
    print(f"{len(points)} sampling points from {len(fset)} records")
    print(f"records per point: min {sizes.min()}, median {int(np.median(sizes))}, "
          f"max {sizes.max()}")

    banner("3. Split by sampling point, never by record")
    train_idx, val_idx, held = split_by_sampling_point(fset.spids, 0.15, seed=0)
    train, val = fset.subset(train_idx), fset.subset(val_idx)
    shared = np.intersect1d(np.unique(train.spids), np.unique(val.spids))
    print(f"train records: {len(train)}  validation records: {len(val)}")
    print(f"validation holds out {len(held)} whole points; "
          f"points shared across the split: {len(shared)}")

    banner("4. Training graph (every node is a training record)")
    cfg = KnnConfig(k=4, n_records=2)
    pts = points_from_records(train)
    g_train = build_graph("train", train.features, train.spids, len(train),
                          train.features, None, pts, cfg, seed=0)
    g_train.validate()
    deg = g_train.degrees()
    print(f"nodes: {g_train.n_nodes}  undirected edges: {len(g_train.edges)}")
    print(f"selections per node: max {g_train.selection_counts.max()} "
          f"(cap k*n = {cfg.k * cfg.n_records})")
    print(f"degree: mean {deg.mean():.1f}, max {deg.max()} "
          f"(degree also counts being selected by other nodes)")

    banner("5. Validation graph (held-out nodes attach to training nodes)")
    feats = np.concatenate([train.features, val.features])
    spids_all = np.concatenate([train.spids, val.spids])
    g_val = build_graph("validation", feats, spids_all, len(train),
                        train.features, val.features, pts, cfg, seed=0,
                        train_pairs=g_train.edges)
    g_val.validate()
    e = g_val.edges.astype(int)
    val_val = (~g_val.train_mask[e[:, 0]] & ~g_val.train_mask[e[:, 1]]).sum()
    same_spot = ((g_val.spids[e[:, 0]] == g_val.spids[e[:, 1]])
                 & (g_val.spids[e[:, 0]] >= 0)).sum()
    print(f"nodes: {g_val.n_nodes}  edges: {len(g_val.edges)}")
    print(f"validation-validation edges: {val_val} (must be 0)")
    print(f"edges joining records of one sampling point: {same_spot} (must be 0)")

    banner("6. Coordinates standardized from the training subset only")
    scaler = CoordScaler.fit(train.coords)
    z = scaler.transform(val.coords)
    print(f"validation coords in train units: mean {z.mean(axis=0).round(2)}, "
          f"std {z.std(axis=0).round(2)}")


if __name__ == "__main__":
    main()
