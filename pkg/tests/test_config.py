import logging

import pytest

import config
from config import RADIUS_PRESETS, Settings, configure_logging, load_config_file
from exceptions import UsageError


def test_defaults_match_training_recipe():
    settings = Settings(_env_file=None)
    assert settings.RADII == [0.01, 0.03, 0.05]
    assert settings.BATCH_SIZE_SINGLE == 64 and settings.BATCH_SIZE_MULTI == 16
    assert settings.LEARNING_RATE == 1e-4 and settings.MOMENTUM == 0.9
    assert settings.K == 500
    assert RADIUS_PRESETS["multi2"] == [0.03, 0.05, 0.07]


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("NORMALS_SEED", "42")
    monkeypatch.setenv("NORMALS_RADII", "[0.02, 0.04]")
    settings = Settings(_env_file=None)
    assert settings.SEED == 42
    assert settings.RADII == [0.02, 0.04]


def test_config_file_keys_are_lower_cased(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# training run\nEPOCHS=3\nradii = 0.01,0.05\nfreeze_subnets=true\n")
    assert load_config_file(str(path)) == {"epochs": "3", "radii": "0.01,0.05", "freeze_subnets": "true"}
    with pytest.raises(UsageError):
        load_config_file(str(tmp_path / "missing.env"))


def test_configure_logging_installs_one_handler():
    configure_logging("debug")
    configure_logging("warning")
    root = logging.getLogger()
    ours = [h for h in root.handlers if getattr(h, "_normals_handler", False)]
    assert len(ours) == 1
    assert root.level == logging.WARNING


def test_module_settings_instance():
    assert isinstance(config.settings, Settings)
