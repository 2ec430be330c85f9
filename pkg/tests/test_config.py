import json

import pytest

from mdcc.config import PRESETS, RunConfig, env_overrides, load_config, preset
from mdcc.errors import ConfigError


class TestValidation:
    def test_defaults_are_valid(self):
        RunConfig().validate()

    @pytest.mark.parametrize("field,value", [
        ("gamma_root", 1.5), ("gamma_root", -0.1), ("theta", 0.0), ("theta", 1.2),
        ("beta", -1.0), ("lr_root", 0.0), ("batch_size", 0), ("eta_tail", 1),
        ("rejection_rule", "vote"), ("optimizer", "rmsprop"), ("distance_kind", "l1"),
        ("root_hidden", (0,)),
    ])
    def test_bad_value_names_the_field(self, field, value):
        with pytest.raises(ConfigError) as info:
            RunConfig(**{field: value})
        assert info.value.field == field
        assert str(info.value).startswith(field)

    def test_boundaries_accepted(self):
        RunConfig(gamma_root=0.0, theta=1.0, beta=0.0)
        RunConfig(gamma_root=1.0)


class TestPresets:
    def test_rf_table(self):
        cfg = preset("rf")
        assert (cfg.lr_root, cfg.lr_leaf, cfg.batch_size) == (0.005, 0.002, 50)
        assert (cfg.alpha_root, cfg.gamma_root, cfg.theta, cfg.buffer_size) == (2, 0.008, 0.7, 1000)

    def test_twitter_table(self):
        cfg = preset("twitter")
        assert (cfg.lr_root, cfg.batch_size, cfg.theta, cfg.buffer_size) == (0.001, 20, 0.5, 80)

    def test_unknown(self):
        with pytest.raises(ConfigError, match="preset"):
            preset("imagenet")

    def test_all_presets_valid(self):
        for name in PRESETS:
            preset(name).validate()


class TestLayering:
    def test_file_over_preset(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"theta": 0.3, "root_hidden": [8, 8]}))
        cfg = load_config(path, "rf", env={})
        assert cfg.theta == 0.3 and cfg.lr_root == 0.005 and cfg.root_hidden == (8, 8)

    def test_env_over_file_and_overrides_over_env(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 1, "beta": 0.5}))
        env = {"MDCC_SEED": "2", "MDCC_BETA": "0.25", "OTHER": "x"}
        cfg = load_config(path, env=env, overrides={"seed": 3})
        assert (cfg.seed, cfg.beta) == (3, 0.25)

    def test_env_parsing(self):
        assert env_overrides({"MDCC_THETA": "0.2", "MDCC_OPTIMIZER": "sgd", "MDCC_NOPE": "1"}) == {
            "theta": 0.2, "optimizer": "sgd",
        }

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"tehta": 0.3}))
        with pytest.raises(ConfigError, match="tehta"):
            load_config(path, env={})

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="batch_size"):
            RunConfig.from_dict({"batch_size": 2.5})

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            load_config(path, env={})

    def test_roundtrip(self):
        cfg = RunConfig(theta=0.25, leaf_hidden=(32, 16), seed=9)
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
