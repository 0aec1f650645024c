import json

import numpy as np
import pytest

from sufflab.utils.config_manager import (
    DEFAULT_PRESETS,
    THREADS_ENV,
    ConfigManager,
    ExperimentConfig,
    deep_merge,
    thread_limit,
)
from sufflab.utils.errors import ConfigError
from sufflab.utils.seeding import derive_seed, make_rng, make_torch_generator


def test_packaged_presets_match_defaults():
    manager = ConfigManager()
    assert manager.presets == DEFAULT_PRESETS
    assert set(manager.get_preset_list()) == {"figure1", "topic", "vmf", "equivalence", "suff"}


def test_missing_presets_file_is_created(tmp_path):
    path = tmp_path / "presets" / "experiments.json"
    manager = ConfigManager(path)
    assert path.exists()
    assert json.loads(path.read_text()) == DEFAULT_PRESETS
    assert manager.get_preset("vmf")["training"]["K"] == 16


def test_corrupt_presets_file(tmp_path):
    path = tmp_path / "experiments.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ConfigManager(path)


def test_get_preset_returns_a_copy(tmp_path):
    manager = ConfigManager(tmp_path / "p.json")
    manager.get_preset("topic")["training"]["K"] = 99
    assert manager.get_preset("topic")["training"]["K"] == 8


def test_update_preset_validates_and_persists(tmp_path):
    path = tmp_path / "p.json"
    manager = ConfigManager(path)
    data = deep_merge(DEFAULT_PRESETS["vmf"], {"repetitions": 1})
    assert manager.update_preset("vmf", data)
    assert ConfigManager(path).get_preset("vmf")["repetitions"] == 1
    assert manager.update_preset("unknown", data) is False
    with pytest.raises(ConfigError):
        manager.update_preset("vmf", {"seed": -1})


def test_deep_merge_keeps_untouched_keys():
    merged = deep_merge({"a": {"b": 1, "c": 2}, "d": [1]}, {"a": {"b": 5}, "d": [2, 3]})
    assert merged == {"a": {"b": 5, "c": 2}, "d": [2, 3]}


def test_build_config_merges_user_values(tmp_path):
    manager = ConfigManager(tmp_path / "p.json")
    config = manager.build_config("figure1", {"training": {"epochs": 3}, "repetitions": 2}, tmp_path / "out")
    assert config.training["epochs"] == 3
    assert config.training["K"] == 64
    assert config.repetitions == 2
    assert config.output_dir == str(tmp_path / "out")


@pytest.mark.parametrize(
    "override",
    [
        {"seed": -1},
        {"seed": 2 ** 64},
        {"seed": True},
        {"repetitions": 0},
        {"scenario": {"variant": "mixture"}},
        {"training": {"K": 0}},
        {"downstream": {"m_grid": []}},
        {"downstream": {"m_grid": [10, -5]}},
        {"colour": "blue"},
    ],
)
def test_invalid_configs(override, tmp_path):
    manager = ConfigManager(tmp_path / "p.json")
    with pytest.raises(ConfigError):
        manager.build_config("figure1", override)


def test_unknown_experiment_tag(tmp_path):
    with pytest.raises(ConfigError):
        ConfigManager(tmp_path / "p.json").build_config("figure2")


def test_from_dict_needs_seed():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict("suff", {"repetitions": 1})


def test_to_dict_round_trip():
    config = ExperimentConfig.from_dict("topic", DEFAULT_PRESETS["topic"], "out")
    assert ExperimentConfig.from_dict("topic", config.to_dict()) == config


def test_load_user_config(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"seed": 7}))
    assert ConfigManager.load_user_config(good) == {"seed": 7}
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ConfigManager.load_user_config(listed)
    with pytest.raises(ConfigError):
        ConfigManager.load_user_config(tmp_path / "missing.json")


def test_thread_limit(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert thread_limit() == 3
    monkeypatch.setenv(THREADS_ENV, "0")
    with pytest.raises(ConfigError):
        thread_limit()
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        thread_limit()
    monkeypatch.delenv(THREADS_ENV)
    assert thread_limit() >= 1


# ---------------------------------------------------------------------------
# Seed derivation
# ---------------------------------------------------------------------------


def test_derive_seed_is_deterministic_and_tag_sensitive():
    assert derive_seed(1, "figure1", 0) == derive_seed(1, "figure1", 0)
    assert derive_seed(1, "figure1", 0) != derive_seed(1, "figure1", 1)
    assert derive_seed(1, "a", "bc") != derive_seed(1, "ab", "c")
    assert 0 <= derive_seed(2 ** 64 - 1, "x") < 2 ** 64


def test_streams_are_reproducible():
    np.testing.assert_array_equal(make_rng(5, "vmf", 1).random(4), make_rng(5, "vmf", 1).random(4))
    first = make_torch_generator(5, "init").initial_seed()
    assert first == make_torch_generator(5, "init").initial_seed()
    assert first < 2 ** 63
