"""Run configuration: defaults, presets, validation and overrides."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .errors import ConfigError

ENV_PREFIX = "MDCC_"


@dataclass(frozen=True)
class RunConfig:
    lr_root: float = 0.005
    lr_leaf: float = 0.002
    batch_size: int = 50
    alpha_root: int = 2
    gamma_root: float = 0.008
    # "unknown_prob": reject when P(unknown) >= gamma_root.
    # "argmax": reject when the unknown slot wins the OpenMax argmax.
    rejection_rule: str = "unknown_prob"
    theta: float = 0.5
    beta: float = 1.0
    reference_size: int = 1000
    buffer_size: int = 1000
    eta_tail: int = 20
    root_iterations: int = 2000
    leaf_iterations: int = 2000
    root_hidden: tuple = (64,)
    leaf_hidden: tuple = (64,)
    optimizer: str = "adam"
    distance_kind: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "root_hidden", tuple(int(h) for h in self.root_hidden))
        object.__setattr__(self, "leaf_hidden", tuple(int(h) for h in self.leaf_hidden))
        self.validate()

    def validate(self):
        _positive(self, "lr_root")
        _positive(self, "lr_leaf")
        for name in ("batch_size", "alpha_root", "reference_size", "buffer_size",
                     "root_iterations", "leaf_iterations"):
            _positive_int(self, name)
        _int_at_least(self, "eta_tail", 2)
        _int_at_least(self, "seed", 0)
        if not 0.0 <= self.gamma_root <= 1.0:
            raise ConfigError("gamma_root", f"must lie in [0, 1], got {self.gamma_root}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("theta", f"must lie in (0, 1], got {self.theta}")
        if not self.beta >= 0.0:
            raise ConfigError("beta", f"must be non-negative, got {self.beta}")
        if self.rejection_rule not in ("unknown_prob", "argmax"):
            raise ConfigError("rejection_rule", f"unknown rule {self.rejection_rule!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer", f"unknown optimizer {self.optimizer!r}")
        if self.distance_kind not in ("cosine", "euclidean"):
            raise ConfigError("distance_kind", f"unknown distance {self.distance_kind!r}")
        for name in ("root_hidden", "leaf_hidden"):
            if any(h <= 0 for h in getattr(self, name)):
                raise ConfigError(name, "hidden layer widths must be positive")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["root_hidden"] = list(self.root_hidden)
        d["leaf_hidden"] = list(self.leaf_hidden)
        return d

    @classmethod
    def from_dict(cls, d, base=None):
        base = base or cls()
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        merged = base.to_dict()
        for key, value in d.items():
            merged[key] = _coerce(key, value)
        try:
            return cls(**merged)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("config", str(exc)) from exc


PRESETS = {
    "rf": {
        "lr_root": 0.005, "lr_leaf": 0.002, "batch_size": 50,
        "alpha_root": 2, "gamma_root": 0.008, "theta": 0.7, "buffer_size": 1000,
    },
    "twitter": {
        "lr_root": 0.001, "lr_leaf": 0.002, "batch_size": 20,
        "alpha_root": 2, "gamma_root": 0.008, "theta": 0.5, "buffer_size": 80,
    },
}


def preset(name):
    try:
        return RunConfig.from_dict(PRESETS[name])
    except KeyError:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_config(path=None, preset_name=None, env=None, overrides=None):
    """Resolve a config: defaults < preset < file < ``MDCC_*`` env < overrides."""
    cfg = preset(preset_name) if preset_name else RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config", f"{path} must contain a JSON object")
        cfg = RunConfig.from_dict(data, base=cfg)
    env_values = env_overrides(os.environ if env is None else env)
    if env_values:
        cfg = RunConfig.from_dict(env_values, base=cfg)
    if overrides:
        cfg = RunConfig.from_dict(overrides, base=cfg)
    return cfg


def env_overrides(environ):
    names = {f.name for f in dataclasses.fields(RunConfig)}
    out = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name not in names:
            continue
        try:
            out[name] = json.loads(raw)
        except json.JSONDecodeError:
            out[name] = raw
    return out


_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key, value):
    kind = _TYPES[key]
    try:
        if kind == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind == "tuple":
            if isinstance(value, (int, float)):
                value = [value]
            return tuple(int(v) for v in value)
        if kind == "str":
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(key, f"invalid value {value!r}") from None
    return value


def _positive(cfg, name):
    if not getattr(cfg, name) > 0:
        raise ConfigError(name, f"must be positive, got {getattr(cfg, name)}")


def _positive_int(cfg, name):
    _int_at_least(cfg, name, 1)


def _int_at_least(cfg, name, low):
    value = getattr(cfg, name)
    if not isinstance(value, int) or value < low:
        raise ConfigError(name, f"must be an integer >= {low}, got {value!r}")
