import json

import pytest

from mtscyclegan.config import config_from_dict, load_config
from mtscyclegan.errors import ConfigError


def test_defaults():
    cfg = config_from_dict({})
    assert cfg.spec.steps == 72 and cfg.n_windows == 512 and cfg.n_eval_windows == 256
    assert cfg.train.epochs == 200 and cfg.train.batch_size == 16
    assert cfg.train.weights.lambda_cycle == 10 and cfg.train.weights.lambda_identity == 5
    assert cfg.train.generator_opt.lr == 2e-4 and cfg.train.generator_opt.beta1 == 0.5
    assert [m.gamma_s for m in cfg.source.mappings] == [1800, 3600, 5400]
    assert [m.alpha for m in cfg.target.mappings] == [2.0, 0.5, 1.0]


def test_seed_override_propagates():
    cfg = config_from_dict({"seed": 1}, seed=7)
    assert cfg.seed == 7 and cfg.train.seed == 7
    assert cfg.source.seed == 8 and cfg.target.seed == 9
    assert cfg.eval_params("source").seed == 108


def test_mapping_list_form():
    cfg = config_from_dict({"target": {"mappings": [
        {"alpha": 1, "beta": 0, "gamma_s": 0}, {"alpha": 2, "beta": 1, "gamma_s": 300},
        {"alpha": 3, "beta": 2, "gamma_s": 600}]}})
    assert cfg.target.mappings[2].alpha == 3


def test_field_level_errors():
    with pytest.raises(ConfigError, match="generator"):
        config_from_dict({"generator": {"hidden": 0}})
    with pytest.raises(ConfigError, match="train.weights"):
        config_from_dict({"train": {"weights": {"lambda_cycle": 1, "bogus": 2}}})
    with pytest.raises(ConfigError, match="source.mappings"):
        config_from_dict({"source": {"mappings": {"B": {"alpha": 1, "beta": 0, "gamma_s": 0}}}})
    with pytest.raises(ConfigError, match="top-level"):
        config_from_dict({"epochs": 3})


def test_identical_domains_rejected():
    same = {"mappings": {"B": {"alpha": 1, "beta": 0, "gamma_s": 0}, "C": {"alpha": 1, "beta": 0, "gamma_s": 0},
                         "D": {"alpha": 1, "beta": 0, "gamma_s": 0}}}
    with pytest.raises(ConfigError):
        config_from_dict({"source": same, "target": same})


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"n_windows": 8}))
    assert load_config(p).n_windows == 8
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
