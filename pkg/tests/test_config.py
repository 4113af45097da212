"""Run-config validation: defaults, strict keys, field-path messages."""

import json

import pytest

from hazelab.config import RunConfig, load_run_config
from hazelab.errors import ConfigError


def test_empty_config_uses_defaults():
    cfg = RunConfig({})
    assert cfg.seed == 0
    assert cfg.encoder == "tiny"
    assert cfg.betas == (0.1, 0.2, 0.3, 0.4)
    assert cfg.image_size == (64, 64)
    assert cfg.train_config().batch_size == 8
    assert cfg.train_config().learning_rate == pytest.approx(1e-4)
    assert cfg.train_config().patience == 7


def test_unknown_key_rejected_with_path():
    with pytest.raises(ConfigError) as err:
        RunConfig({"train": {"learning_rat": 1e-3}})
    assert "train.learning_rat" in str(err.value)


def test_negative_beta_names_haze_beta():
    with pytest.raises(ConfigError) as err:
        RunConfig({"haze": {"beta": [0.1, -1]}})
    assert "haze.beta" in str(err.value)


def test_bad_range_named():
    with pytest.raises(ConfigError) as err:
        RunConfig({"haze": {"saturation": [0.7, 0.2]}})
    assert "haze.saturation" in str(err.value)


def test_image_size_must_be_multiple_of_32():
    with pytest.raises(ConfigError) as err:
        RunConfig({"image_size": [60, 64]})
    assert "image_size" in str(err.value)


def test_seed_must_be_nonnegative_integer():
    with pytest.raises(ConfigError):
        RunConfig({"seed": -3})
    with pytest.raises(ConfigError):
        RunConfig({"seed": 1.5})


def test_type_errors_are_config_errors():
    with pytest.raises(ConfigError):
        RunConfig({"train": {"batch_size": "eight"}})
    with pytest.raises(ConfigError):
        RunConfig({"train": {"batch_size": True}})


def test_overrides_and_file_loading(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 3, "train": {"max_epochs": 11}}))
    cfg = load_run_config(path, {"seed": 9})
    assert cfg.seed == 9
    assert cfg.train_config().max_epochs == 11


def test_invalid_json_is_config_error(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_model_config_round_trip():
    cfg = RunConfig({"encoder": "vgg16", "head": "direct"})
    mc = cfg.model_config()
    assert mc.encoder.name == "vgg16"
    assert mc.encoder.trainable is False
    assert mc.head == "direct"
    baseline = cfg.model_config("baseline")
    assert baseline.kind == "baseline"
