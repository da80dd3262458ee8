import numpy as np
import pytest

from poinhier.config import LossToggles, TrainConfig, from_plain, parse_override, resolve, stream, to_plain
from poinhier.errors import ConfigError


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.g.c, cfg.g.dim, cfg.K_b, cfg.K_s, cfg.B) == (0.01, 160, 10, 6, 256)
    assert (cfg.k_b, cfg.k_s, cfg.lr_prototypes) == (0.003, 0.0006, 1e-3)
    assert (cfg.hsl.K, cfg.hsl.delta) == (3, 0.1)


def test_plain_round_trip():
    cfg = TrainConfig(K_top=12, loss_toggles=LossToggles(True, False, True), seed=4)
    assert from_plain(TrainConfig, to_plain(cfg)) == cfg


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        resolve(TrainConfig, {"bogus": 1})
    with pytest.raises(ConfigError):
        resolve(TrainConfig, overrides=["hsl.nope=2"])


def test_three_layer_precedence():
    file_cfg = {"K_top": 32, "epochs": 3, "hsl": {"K": 2}}
    cfg = resolve(TrainConfig, file_cfg, ["epochs=7", "g.c=1.0"])
    assert cfg.K_top == 32       # file over default
    assert cfg.epochs == 7       # override over file
    assert cfg.hsl.K == 2        # file, nested
    assert cfg.hsl.delta == 0.1  # default, nested
    assert cfg.g.c == 1.0 and cfg.g.dim == 160


def test_every_field_reachable():
    plain = to_plain(TrainConfig())

    def leaves(d, prefix=""):
        for k, v in d.items():
            if isinstance(v, dict):
                yield from leaves(v, f"{prefix}{k}.")
            else:
                yield f"{prefix}{k}"

    for key in leaves(plain):
        parse_override(f"{key}=null")  # parses
    assert resolve(TrainConfig, overrides=["loss_toggles.pfw=false"]).loss_toggles.pfw is False


def test_override_parsing():
    assert parse_override("a.b=3") == {"a": {"b": 3}}
    assert parse_override("name=abc") == {"name": "abc"}
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_invalid_values():
    with pytest.raises(ConfigError):
        resolve(TrainConfig, overrides=["lr_cls=0"])
    with pytest.raises(ConfigError):
        resolve(TrainConfig, overrides=["g.c=-1"])


def test_streams_independent():
    a = stream(0, "batching").random(4)
    assert np.array_equal(a, stream(0, "batching").random(4))
    assert not np.array_equal(a, stream(0, "gumbel").random(4))
    assert not np.array_equal(a, stream(1, "batching").random(4))
