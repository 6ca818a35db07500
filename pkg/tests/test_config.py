"""Config parsing, validation, and fingerprinting."""

import pytest

from hgloc.config import PipelineConfig, default_config
from hgloc.dataset import DatasetDescriptor, builtin_descriptor
from hgloc.errors import ConfigError
from hgloc.synthetic import SyntheticWorld


def test_defaults_match_published_operating_point():
    cfg = default_config("uji")
    assert cfg.dataset.ap_count == 520
    assert cfg.k == 4 and cfg.n_records == 1
    assert cfg.lr == 0.0005
    assert cfg.batch_size == 256
    assert cfg.hidden == 256
    assert cfg.mlp_hidden == (64, 32)
    assert cfg.dropout == 0.5
    assert cfg.leaky_slope == 0.01
    assert cfg.patience == 10 and cfg.max_epochs == 100
    assert cfg.building_beta == 0.1
    assert cfg.val_ratio == 0.10
    assert cfg.floor_scale == 2.0
    assert cfg.validate() == []


def test_uts_preset_has_no_buildings():
    cfg = default_config("uts")
    assert cfg.dataset.ap_count == 589
    assert not cfg.dataset.has_buildings


def test_text_round_trip_preserves_everything(tmp_path):
    cfg = default_config("uji")
    cfg.mlp_hidden = (48, 24)
    cfg.adapter_full_matrix = True
    cfg.seed = 17
    cfg.l1_lambda = 3e-6
    path = tmp_path / "run.cfg"
    cfg.save(path)
    loaded = PipelineConfig.load(path)
    assert loaded == cfg
    assert loaded.fingerprint() == cfg.fingerprint()


def test_fingerprint_tracks_any_field_change():
    a = default_config("uji")
    b = default_config("uji")
    assert a.fingerprint() == b.fingerprint()
    b.neighbor_cap = 5
    assert a.fingerprint() != b.fingerprint()
    c = default_config("uts")
    assert a.fingerprint() != c.fingerprint()


def test_validation_collects_all_problems():
    cfg = default_config("uji")
    cfg.val_ratio = 1.5
    cfg.k = 0
    cfg.dropout = 1.0
    cfg.lr = -1.0
    cfg.adapter_fraction = 0.0
    problems = cfg.validate()
    assert len(problems) == 5
    joined = "\n".join(problems)
    for frag in ("val_ratio", "graph.k", "dropout", "train.lr", "adapter_fraction"):
        assert frag in joined
    with pytest.raises(ConfigError) as err:
        cfg.ensure_valid()
    assert len(err.value.problems) == 5


def test_unknown_and_unparseable_keys_reported_together():
    cfg = default_config("uji")
    text = cfg.to_text() + "\n[train]\nwarmup = 5\n"
    text = text.replace("batch_size = 256", "batch_size = many")
    with pytest.raises(ConfigError) as err:
        PipelineConfig.from_text(text)
    joined = "\n".join(err.value.problems)
    assert "train.warmup" in joined
    assert "train.batch_size" in joined


def test_custom_descriptor_round_trip():
    world = SyntheticWorld(seed=2)
    cfg = PipelineConfig(dataset=world.descriptor(), seed=3, hidden=32)
    loaded = PipelineConfig.from_text(cfg.to_text())
    assert loaded.dataset == world.descriptor()
    assert loaded.hidden == 32


def test_train_settings_projection():
    cfg = default_config("uji")
    cfg.lr = 0.002
    cfg.neighbor_cap = 6
    cfg.adapter_epochs = 7
    settings = cfg.train_settings()
    assert settings.lr == 0.002
    assert settings.neighbor_cap == 6
    assert settings.adapter_epochs == 7
    assert settings.batch_size == cfg.batch_size
