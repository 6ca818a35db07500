"""Training the first-stage localizer.

Runs the pipeline through its coarse stage: one graph network regressing
standardized coordinates, one classifying floor (and building) with two
training phases. Prints the epoch-by-epoch validation curves and the
held-out metrics, then shows that the saved checkpoint reproduces the
model bit for bit.
"""

import shutil

import numpy as np

from hgloc.evaluation import label_accuracy, location_errors
from hgloc.models import load_checkpoint
from hgloc.pipeline import run_offline

from common import OUT_ROOT, banner, demo_config, demo_surveys


def main():
    out = OUT_ROOT / "02_coarse"
    world, train_csv, _ = demo_surveys(out)
    config = demo_config(world)

    banner("1. Run the offline stages up to the coarse models")
    # retrain every invocation: the story here is the training curve, and
    # a resumed run loads checkpoints without histories
    shutil.rmtree(out / "run", ignore_errors=True)
    state = run_offline(config, train_csv, out / "run", until="train-coarse")
    print(f"artifacts in {out / 'run'}")

    banner("2. Coordinate regressor: validation error by epoch")
    reg = state.train_results["coarse_regressor"]
    for row in reg.history[:: max(1, len(reg.history) // 8)]:
        marker = " <- best so far" if row["improved"] else ""
        print(f"epoch {row['epoch']:>3}  train loss {row['train_loss']:.4f}  "
              f"val MLE {row['val_mle']:.2f} m{marker}")
    print(f"stopped after {reg.epochs_run} epochs; "
          f"kept parameters from epoch {reg.best_epoch}")

    banner("3. Classifier: floor phase, then building head")
    cls = state.train_results["coarse_classifier"]
    p1 = cls.phase1.history[-1]
    print(f"phase 1 ran {cls.phase1.epochs_run} epochs, "
          f"final val floor accuracy {p1['val_accuracy']:.4f}")
    if cls.phase2 is not None:
        p2 = cls.phase2.history[-1]
        print(f"phase 2 ran {cls.phase2.epochs_run} epochs, "
              f"final val building accuracy {p2['val_accuracy']:.4f}")

    banner("4. Held-out metrics from the saved prediction store")
    val = state.val_set
    xy_pred = state.scaler.inverse(state.val_store.coords_std)
    mle = float(location_errors(xy_pred, val.coords).mean())
    print(f"val MLE {mle:.2f} m (map spans roughly 100 m per axis)")
    print(f"val floor accuracy {label_accuracy(state.val_store.floors, val.floors):.4f}")
    print(f"val building accuracy "
          f"{label_accuracy(state.val_store.buildings, val.buildings):.4f}")

    banner("5. Checkpoints restore the exact parameters")
    restored, meta = load_checkpoint(out / "run" / "coarse_regressor.bin")
    same = all(
        np.array_equal(a.value, b.value)
        for a, b in zip(state.coarse_reg.params(), restored.params())
    )
    print(f"parameter arrays identical after reload: {same}")
    print(f"checkpoint metadata: best_epoch={meta['extra']['best_epoch']}, "
          f"seed={meta['seed']}")


if __name__ == "__main__":
    main()
