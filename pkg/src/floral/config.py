"""YAML experiment configs: defaults, ``FLORAL_*`` environment overrides, validation.

A config is a nested mapping::

    seed: 0
    rounds: 20
    defense: {name: floral, gamma: 0.5}
    attack: {kind: byzantine, epsilon: 0.2, sigma: 1.0}
    model: {arch: linear, lookback: 24, horizon: 12}
    training: {lr: 0.05, epochs: 3, batch_size: 128}

``seed``, ``rounds`` and ``defense`` are required; everything else has a
default. Environment variables override the file: ``FLORAL_SEED=3`` sets
``seed`` and ``FLORAL_ATTACK__EPSILON=0.3`` sets ``attack.epsilon`` (double
underscore separates levels, values are parsed as YAML scalars).
"""

from __future__ import annotations

import copy
import dataclasses
import os
from pathlib import Path
from typing import Any, Mapping

import yaml

from .attacks import AttackConfig
from .data import GeneratorConfig
from .defenses import DEFENSES
from .models import ModelSpec
from .runtime import CsvSource, ExperimentConfig, TrainingConfig

ENV_PREFIX = "FLORAL_"
REQUIRED = ("seed", "rounds", "defense")

_TOP = {
    "n_clients": 30,
    "fraction": 0.5,
    "rounds": 20,
    "seed": 0,
    "aggregator": "fedavg",
    "mu": 0.01,
    "test_fraction": 0.2,
    "window": 2,
}
_SECTIONS = {
    "model": ModelSpec,
    "data": GeneratorConfig,
    "attack": AttackConfig,
    "training": TrainingConfig,
}
# generator fields owned by other sections or derived from the top-level seed
_DATA_DERIVED = ("n_clients", "lookback", "horizon", "n_channels", "seed")

DEFENSE_PARAMS = {
    "none": (),
    "floral": ("gamma",),
    "krum": ("f",),
    "multikrum": ("f", "m_select"),
    "rfa": (),
    "median": (),
    "trimmed_mean": ("beta",),
    "foolsgold": ("kappa",),
    "rlr": ("threshold", "server_lr"),
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending dotted key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def load_yaml(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a mapping")
    return doc


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    """Nested override mapping from ``FLORAL_*`` variables."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        set_path(out, path, value)
    return out


def set_path(doc: dict, path, value) -> None:
    node = doc
    for p in path[:-1]:
        cur = node.get(p)
        if isinstance(cur, str) and p == "defense":
            node[p] = {"name": cur}
        elif not isinstance(cur, dict):
            node[p] = {}
        node = node[p]
    node[path[-1]] = value


def merge(base: dict, over: Mapping) -> dict:
    """Recursive dict merge; ``over`` wins."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        elif k == "defense" and isinstance(v, Mapping) and isinstance(out.get(k), str):
            out[k] = merge({"name": out[k]}, v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_value(name: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
    elif isinstance(default, float) or default is None:
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(name, f"expected a number, got {value!r}")
        value = None if value is None else float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
    elif isinstance(default, tuple):
        if isinstance(value, int) and not isinstance(value, bool):
            value = (value,)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(name, f"expected a list, got {value!r}")
        value = tuple(value)
    return value


def _section(name: str, cls, doc, skip=()) -> Any:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(name, "expected a mapping")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)} - set(skip)
    kwargs = {}
    for key, value in doc.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
        kwargs[key] = _check_value(f"{name}.{key}", value, getattr(defaults, key))
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(name, str(exc)) from None


def config_from_dict(doc: Mapping) -> ExperimentConfig:
    """Validate a nested mapping and build an :class:`ExperimentConfig`."""
    if not isinstance(doc, Mapping):
        raise ConfigError("config", "top level must be a mapping")
    for key in REQUIRED:
        if key not in doc:
            raise ConfigError(key, "required field is missing")
    allowed = set(_TOP) | set(_SECTIONS) | {"defense", "csv"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(key, "unknown field")

    top = {k: _check_value(k, doc[k], d) for k, d in _TOP.items() if k in doc}
    if top.get("rounds", 1) < 1:
        raise ConfigError("rounds", "must be >= 1")
    if top.get("n_clients", 1) < 1:
        raise ConfigError("n_clients", "must be >= 1")

    defense = doc["defense"]
    if isinstance(defense, str):
        defense = {"name": defense}
    if not isinstance(defense, dict) or "name" not in defense:
        raise ConfigError("defense.name", "required field is missing")
    name = defense["name"]
    if name not in DEFENSES:
        raise ConfigError("defense.name", f"unknown defense {name!r}; choose from {', '.join(DEFENSES)}")
    params = {k: v for k, v in defense.items() if k != "name"}
    for key, value in params.items():
        if key not in DEFENSE_PARAMS[name]:
            raise ConfigError(f"defense.{key}", f"not a parameter of {name}")
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"defense.{key}", f"expected a number, got {value!r}")
    if "gamma" in params and not 0 <= params["gamma"] <= 1:
        raise ConfigError("defense.gamma", "must lie in [0, 1]")

    sections = {
        "model": _section("model", ModelSpec, doc.get("model")),
        "data": _section("data", GeneratorConfig, doc.get("data"), skip=_DATA_DERIVED),
        "attack": _section("attack", AttackConfig, doc.get("attack")),
        "training": _section("training", TrainingConfig, doc.get("training")),
    }
    csv_src = None
    if doc.get("csv") is not None:
        c = doc["csv"]
        if not isinstance(c, dict):
            raise ConfigError("csv", "expected a mapping")
        for key in ("paths", "channels"):
            if not c.get(key):
                raise ConfigError(f"csv.{key}", "required field is missing")
        extra = set(c) - {"paths", "channels", "client_column", "validation_fraction"}
        if extra:
            raise ConfigError(f"csv.{sorted(extra)[0]}", "unknown field")
        paths = c["paths"] if isinstance(c["paths"], list) else [c["paths"]]
        csv_src = CsvSource(
            tuple(str(p) for p in paths),
            tuple(str(ch) for ch in c["channels"]),
            c.get("client_column"),
            float(c.get("validation_fraction", 0.05)),
        )
    try:
        return ExperimentConfig(
            **top, **sections, csv=csv_src, defense=name, defense_params=params
        )
    except ValueError as exc:
        raise ConfigError("config", str(exc)) from None


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Inverse of :func:`config_from_dict` (JSON/YAML friendly)."""
    out = {k: getattr(cfg, k) for k in _TOP}
    for name in _SECTIONS:
        d = dataclasses.asdict(getattr(cfg, name))
        if name == "data":
            for k in _DATA_DERIVED:
                d.pop(k)
        out[name] = _plain(d)
    out["defense"] = {"name": cfg.defense, **_plain(dict(cfg.defense_params))}
    if cfg.csv is not None:
        out["csv"] = _plain(dataclasses.asdict(cfg.csv))
    return out


def resolve(path=None, overrides: Mapping | None = None, environ=None, base: Mapping | None = None) -> ExperimentConfig:
    """File (or ``base``) < environment < ``overrides`` (CLI flags)."""
    doc = dict(base or {})
    if path is not None:
        doc = merge(doc, load_yaml(path))
    doc = merge(doc, env_overrides(environ))
    if overrides:
        doc = merge(doc, overrides)
    return config_from_dict(doc)


def dump_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)
