"""What the feature encoders learn, measured directly.

The stacked encoders are iso-dimensional maps trained with localization
heads; the pipeline uses them only to rebuild neighbor graphs in a
task-shaped space. This script inspects both halves: how much location
signal the encoder heads carry, and how nearest-neighbor structure looks
in raw versus transformed space.
"""

import numpy as np
from scipy.spatial.distance import cdist

from hgloc.evaluation import label_accuracy, location_errors, predicted_classes
from hgloc.pipeline import run_offline

from common import OUT_ROOT, banner, demo_config, demo_surveys


def neighbor_quality(train_feats, train_set, val_feats, val_set, k=4):
    """(same-floor fraction, mean physical distance) of the k nearest rows."""
    d = cdist(val_feats.astype(np.float64), train_feats.astype(np.float64))
    idx = np.argsort(d, axis=1, kind="stable")[:, :k]
    same_floor = (train_set.floors[idx] == val_set.floors[:, None]).mean()
    dx = train_set.coords[idx] - val_set.coords[:, None, :]
    meters = np.sqrt((dx ** 2).sum(axis=2)).mean()
    return float(same_floor), float(meters)


def main():
    out = OUT_ROOT / "03_encoder"
    world, train_csv, _ = demo_surveys(out)
    config = demo_config(world)

    banner("1. Train the encoders (resumes if already on disk)")
    state = run_offline(config, train_csv, out / "run", until="train-sfe")
    train, val = state.train_set, state.val_set
    print("coordinate encoder and coordinate+floor encoder ready")

    banner("2. The encoder heads carry real location signal")
    coords_std, _ = state.sfe_coord.forward(val.features)
    head_mle = float(location_errors(
        state.scaler.inverse(np.asarray(coords_std, dtype=np.float64)),
        val.coords).mean())
    print(f"coordinate head alone, validation MLE: {head_mle:.1f} m")
    _, floor_logits = state.sfe_floor.forward(val.features)
    acc = label_accuracy(
        state.floor_codec.decode(predicted_classes(floor_logits)), val.floors)
    print(f"floor head alone, validation accuracy: {acc:.3f}")
    print("(heads are discarded after training; only the transform is kept)")

    banner("3. Nearest neighbors, raw space vs encoded space")
    rows = [("raw signals", train.features, val.features)]
    rows.append(("coordinate encoder",
                 state.sfe_coord.transform(train.features),
                 state.sfe_coord.transform(val.features)))
    rows.append(("coordinate+floor encoder",
                 state.sfe_floor.transform(train.features),
                 state.sfe_floor.transform(val.features)))
    for label, tf, vf in rows:
        same, meters = neighbor_quality(tf, train, vf, val)
        print(f"{label:<26} same-floor {same:.3f}  neighbor distance {meters:.1f} m")
    print("this generated survey has almost noise-free signals, so raw")
    print("distances are already geometry-aligned; on real surveys with")
    print("device and multipath noise the encoded space is where the")
    print("neighbor lists become reliable")

    banner("4. The transform is iso-dimensional")
    t = state.sfe_coord.transform(train.features[:4])
    print(f"raw width {train.features.shape[1]}, transformed width {t.shape[1]}")
    print("graphs are rebuilt from transformed features; the localizer still")
    print("consumes raw normalized signals as node input")


if __name__ == "__main__":
    main()
