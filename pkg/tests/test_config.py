import json
import os
from unittest.mock import patch

import pytest

from cpgd.functions.codec import CodecConfig
from cpgd.utils.config import (
    DEFAULT_CONFIG_PATH,
    RunConfig,
    echo_config,
    load_run_config,
    resolve_workers,
)
from cpgd.utils.errors import ConfigError


def write_json(path, payload):
    with open(path, "w") as f:
        f.write(payload if isinstance(payload, str) else json.dumps(payload))
    return path


def test_packaged_defaults_match_dataclass():
    with open(DEFAULT_CONFIG_PATH) as f:
        shipped = json.load(f)
    assert shipped == RunConfig().to_dict()


def test_defaults():
    cfg = load_run_config()
    assert cfg.block_size == 16
    assert cfg.search_radius == 16
    assert cfg.steps == 50
    assert cfg.mode == "bidirectional"
    assert cfg.codec_config() == CodecConfig(16, 16, 1, True)


def test_file_values_and_overrides(temp_dir):
    path = write_json(os.path.join(temp_dir, "run.json"), {"quant": 4, "steps": 10, "seed": 3})
    cfg = load_run_config(path, steps=20, seed=None)
    assert cfg.quant == 4
    assert cfg.steps == 20
    assert cfg.seed == 3


def test_unknown_key_in_file(temp_dir):
    path = write_json(os.path.join(temp_dir, "run.json"), {"blocksize": 8})
    with pytest.raises(ConfigError, match="blocksize"):
        load_run_config(path)


def test_unknown_override():
    with pytest.raises(ConfigError, match="colour"):
        load_run_config(colour="red")


def test_invalid_json(temp_dir):
    path = write_json(os.path.join(temp_dir, "run.json"), "{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_run_config(path)


def test_non_object_json(temp_dir):
    path = write_json(os.path.join(temp_dir, "run.json"), [1, 2])
    with pytest.raises(ConfigError, match="JSON object"):
        load_run_config(path)


def test_missing_config_file(temp_dir):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(os.path.join(temp_dir, "absent.json"))


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"steps": 0}, "steps"),
        ({"steps": 1001}, "steps"),
        ({"mode": "backward"}, "mode"),
        ({"channels": 0}, "channels"),
        ({"latent_factor": 0}, "latent_factor"),
        ({"attn_dim": 32, "heads": 3}, "divisible"),
    ],
)
def test_validation(overrides, message):
    with pytest.raises(ConfigError, match=message):
        load_run_config(**overrides)


def test_steps_equal_to_t_train_is_allowed():
    assert load_run_config(steps=1000).steps == 1000


def test_echo_config_round_trips(temp_dir):
    cfg = load_run_config(seed=9, prompt_tokens=[3, 14])
    path = echo_config(cfg, os.path.join(temp_dir, "out"))
    assert os.path.basename(path) == "run_config.json"
    assert load_run_config(path) == cfg


def test_resolve_workers_from_environment():
    with patch.dict(os.environ, {"CPGD_THREADS": "3"}):
        assert resolve_workers() == 3


def test_resolve_workers_default():
    with patch.dict(os.environ, {}, clear=True):
        assert resolve_workers() == (os.cpu_count() or 1)


@pytest.mark.parametrize("raw", ["0", "-2", "many"])
def test_resolve_workers_rejects_bad_values(raw):
    with patch.dict(os.environ, {"CPGD_THREADS": raw}):
        with pytest.raises(ConfigError, match="CPGD_THREADS"):
            resolve_workers()


@pytest.mark.parametrize(
    "values, message",
    [
        ({"channels": "4"}, "channels must be of type int"),
        ({"steps": 2.5}, "steps must be of type int"),
        ({"block_size": True}, "block_size"),
        ({"rle": 1}, "rle must be of type bool"),
        ({"mode": 3}, "mode must be of type str"),
        ({"prompt_tokens": "sharp"}, "prompt_tokens must be of type list"),
        ({"prompt_tokens": [1, "two"]}, "integer token ids"),
        ({"input": 5}, "input must be of type str"),
    ],
)
def test_wrong_value_types_in_file(temp_dir, values, message):
    path = write_json(os.path.join(temp_dir, "run.json"), values)
    with pytest.raises(ConfigError, match=message):
        load_run_config(path)


def test_null_paths_are_accepted(temp_dir):
    path = write_json(os.path.join(temp_dir, "run.json"), {"input": None, "priors": "data/priors"})
    cfg = load_run_config(path)
    assert cfg.input is None
    assert cfg.priors == "data/priors"
