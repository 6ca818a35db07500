"""Shared fixture for the demo scripts: one synthetic survey, one config.

Every demo works on the same generated world so their outputs can be
compared. Artifacts land under demos/out/<demo name> and are resumed on
re-runs; delete the directory to start fresh.
"""

from pathlib import Path

from hgloc.config import PipelineConfig
from hgloc.synthetic import SyntheticWorld

OUT_ROOT = Path(__file__).resolve().parent / "out"


def demo_world():
    return SyntheticWorld(seed=11)


def demo_config(world) -> PipelineConfig:
    return PipelineConfig(
        dataset=world.descriptor(),
        val_ratio=0.15,
        k=4,
        n_records=2,
        hidden=64,
        mlp_hidden=(32, 16),
        sfe_aux_hidden=(32, 16),
        batch_size=64,
        max_epochs=40,
        patience=8,
        sfe_epochs=60,
        adapter_epochs=40,
        adapter_fraction=0.10,
        seed=0,
    )


def demo_surveys(out_dir: Path):
    """Write (or reuse) the train and test CSVs for the shared world."""
    world = demo_world()
    out_dir.mkdir(parents=True, exist_ok=True)
    train_csv = out_dir / "train.csv"
    test_csv = out_dir / "test.csv"
    if not train_csv.exists():
        world.write_survey(train_csv, points_per_floor=40, records=(2, 3), seed=1)
    if not test_csv.exists():
        world.write_survey(test_csv, points_per_floor=6, records=(1, 2), seed=2)
    return world, train_csv, test_csv


def banner(title: str) -> None:
    print()
    print(title)
    print("-" * len(title))
