import json

import pytest

from muonlab.config import ExperimentConfig, config_from_dict, load_config, parse_override
from muonlab.errors import ConfigError


def test_defaults_and_round_trip():
    cfg = config_from_dict({})
    assert cfg.experiment == "dynamics" and cfg.optimizer.kind == "gd"
    assert cfg.data.spectrum == [2.0, 1.0]
    again = config_from_dict(cfg.to_dict())
    assert again == cfg and again.fingerprint() == cfg.fingerprint()
    assert config_from_dict(json.loads(cfg.to_json())) == cfg


def test_kind_defaults_layer_under_user_values():
    cfg = config_from_dict({"experiment": "routing"})
    assert cfg.optimizer.kind == "momentum_gd" and cfg.optimizer.learning_rate == 0.1
    cfg = config_from_dict({"experiment": "routing", "optimizer": "spectral_gd"})
    assert cfg.optimizer.kind == "spectral_gd"
    assert config_from_dict({"experiment": "oscillation"}).mode == "sample"


def test_fingerprint_ignores_out_only():
    a = config_from_dict({"out": "x"})
    assert a.fingerprint() == config_from_dict({"out": "y"}).fingerprint()
    assert a.fingerprint() != config_from_dict({"seed": 1}).fingerprint()
    assert len(a.fingerprint()) == 16


@pytest.mark.parametrize("raw, field", [
    ({"optimizer": {"learning_rte": 0.1}}, "optimizer.learning_rte"),
    ({"bogus": 1}, "bogus"),
    ({"experiment": "nope"}, "experiment"),
    ({"steps": 0}, "steps"),
    ({"steps": 1.5}, "steps"),
    ({"optimizer": {"kind": "sgdx"}}, "optimizer.kind"),
    ({"optimizer": {"momentum": 1.0}}, "optimizer"),
    ({"data": {"spectrum": [1.0, 2.0]}}, "data.spectrum"),
    ({"data": {"spectrum": [2.0, -1.0]}}, "data.spectrum[1]"),
    ({"routing": {"k": 9}}, "routing.k"),
    ({"spurious": {"optimizers": ["gd", "x"]}}, "spurious.optimizers[1]"),
    ({"sweep": {"seed": 3}}, "sweep.seed"),
    ({"model": "wide"}, "model"),
])
def test_invalid_configs_name_the_field(raw, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_overrides():
    assert parse_override("optimizer.learning_rate=0.5") == ("optimizer.learning_rate", 0.5)
    assert parse_override("optimizer.kind=muon") == ("optimizer.kind", "muon")
    assert parse_override("data.spectrum=[4, 1]") == ("data.spectrum", [4, 1])
    with pytest.raises(ConfigError):
        parse_override("novalue")
    cfg = config_from_dict({"optimizer": "adam"}, [("optimizer.learning_rate", 0.2), ("seed", 5)])
    assert cfg.optimizer.kind == "adam" and cfg.optimizer.learning_rate == 0.2 and cfg.seed == 5


def test_load_config_errors(tmp_path):
    good = tmp_path / "c.json"
    good.write_text(json.dumps({"experiment": "dynamics", "steps": 5}))
    assert load_config(good).steps == 5
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "steps": 5,\n  oops\n}')
    with pytest.raises(ConfigError, match="line 3 column 3"):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_dataclass_default_is_valid():
    assert isinstance(config_from_dict(ExperimentConfig().to_dict()), ExperimentConfig)


def test_routing_orthogonalized_optimizers_get_small_steps():
    cfg = config_from_dict({"experiment": "routing", "optimizer": "spectral_gd"})
    assert cfg.optimizer.learning_rate == 1e-3 and cfg.optimizer.momentum == 0.0
    cfg = config_from_dict({"experiment": "routing"}, [("optimizer.kind", "muon"),
                                                       ("optimizer.learning_rate", 0.01)])
    assert cfg.optimizer.learning_rate == 0.01 and cfg.optimizer.momentum == 0.0
