"""Flat key-value run configuration.

One JSON object holds every tunable; each key maps onto a field of one of the
config dataclasses. Command-line ``--set key=value`` overrides are parsed as JSON
when possible, else kept as strings.
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

from .errors import ConfigError
from .factornet import NetConfig
from .riskmodel import CovConfig
from .synth import SynthSpec
from .trainer import TrainConfig

DEFAULTS: dict = {
    "seed": 0,
    # split: explicit end dates win over fractions
    "train_end": None,
    "valid_end": None,
    "test_end": None,
    "train_frac": 2 / 3,
    "valid_frac": 1 / 6,
    # network
    "K": 10,
    "hidden": 32,
    "layers": 2,
    "K1": None,
    "lookback": 60,
    "gat_dropout": 0.5,
    "gat_enabled": True,
    "neighborhood": "full",
    "leaky_slope": 0.2,
    "self_aggregate": False,
    # training
    "learning_rate": 2e-4,
    "accumulation": 64,
    "max_epochs": 100,
    "early_stop_patience": 10,
    "smoothing": 0.99,
    "smoothing_weight_on_previous": True,
    "H": 20,
    "lambda": 0.01,
    "ridge_eps": 1e-6,
    "target_mode": "per-horizon",
    # baselines
    "srm_window": 252,
    "srm_use_correlation": False,
    # risk model
    "corr_halflife": 240,
    "var_halflife": 60,
    "vra_halflife": 20,
    "specific_halflife": 60,
    "window": 504,
    "min_history": 60,
    "vra": True,
    "weights_mode": "equal",
    "alignment": "forward",
    # portfolio
    "rebalance_every": 20,
    "annualization": 252,
    "long_only_tol": 1e-8,
}

_ALIASES = {"lambda": "lam"}


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path}: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a flat JSON object")
        cfg.update(doc)
    cfg.update(overrides or {})
    unknown = sorted(set(cfg) - set(DEFAULTS) - {f.name for f in fields(SynthSpec)})
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    return cfg


def parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def _build(cls, cfg: dict, **extra):
    names = {f.name for f in fields(cls)}
    kw = {}
    for k, v in cfg.items():
        k2 = _ALIASES.get(k, k)
        if k2 in names:
            kw[k2] = tuple(v) if isinstance(v, list) else v
    kw.update(extra)
    try:
        return cls(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def net_config(cfg: dict, P: int) -> NetConfig:
    return _build(NetConfig, cfg, P=P)


def train_config(cfg: dict) -> TrainConfig:
    return _build(TrainConfig, cfg)


def cov_config(cfg: dict) -> CovConfig:
    return _build(CovConfig, cfg)


def synth_spec(doc: dict) -> SynthSpec:
    return _build(SynthSpec, doc)
