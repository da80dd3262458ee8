"""Training configuration and its JSON / ``key=value`` override plumbing."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from poinhier.errors import ConfigError, InvalidInput
from poinhier.geometry import GeometryConfig
from poinhier.hierarchy import HslConfig

# Offsets combined with the master seed; each subsystem owns one stream so that
# switching a subsystem on or off leaves the others untouched.
STREAMS = {"init": 101, "batching": 202, "triplets": 303, "gumbel": 404, "augmentation": 505,
           "split": 606}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name]]))


@dataclass(frozen=True)
class LossToggles:
    ppl: bool = True
    hsl: bool = True
    pfw: bool = True


@dataclass(frozen=True)
class TrainConfig:
    g: GeometryConfig = field(default_factory=GeometryConfig)
    K_b: int = 10
    K_s: int = 6
    K_top: int = 256
    hsl: HslConfig = field(default_factory=HslConfig)
    k_b: float = 0.003
    k_s: float = 0.0006
    B: int = 256
    lr_prototypes: float = 1e-3
    lr_projector: float = 1e-4
    lr_cls: float = 1e-3
    epochs: int = 10
    steps_per_epoch: Optional[int] = None  # None: ceil(n / B)
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    loss_toggles: LossToggles = field(default_factory=LossToggles)
    cls_on_augmented: bool = False
    cls_bias: bool = True
    init_scale: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        self.validate()

    def validate(self):
        for name in ("lr_prototypes", "lr_projector", "lr_cls", "adam_eps", "init_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.K_b < 1 or self.K_s < 1 or self.K_top < 1:
            raise ConfigError("prototype counts must be positive")
        if self.B < 2:
            raise ConfigError("batch size must be at least 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be positive")
        if not (0 <= self.k_b <= 1 and 0 <= self.k_s <= 1):
            raise ConfigError("mask ratios must lie in [0, 1]")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.loss_toggles.hsl:
            self.hsl.validate(self.K_b + self.K_s)

    def to_dict(self) -> dict:
        return to_plain(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return from_plain(cls, data)


def to_plain(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [to_plain(v) for v in obj]
    return obj


def from_plain(cls, data: dict):
    """Build dataclass ``cls`` from nested dicts, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = from_plain(hint, value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, InvalidInput) as exc:
        raise ConfigError(str(exc)) from exc


def merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def parse_override(text: str) -> dict:
    """``a.b=value`` -> ``{"a": {"b": value}}``; values are read as JSON if possible."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = value
    for part in reversed(key.strip().split(".")):
        if not part:
            raise ConfigError(f"malformed override key {key!r}")
        out = {part: out}
    return out


def resolve(cls, config_file: Optional[dict] = None, overrides=()) -> Any:
    """Defaults, then the config file, then command-line overrides."""
    data = to_plain(cls())
    if config_file:
        data = merge(data, config_file)
    for text in overrides:
        data = merge(data, parse_override(text))
    return from_plain(cls, data)
