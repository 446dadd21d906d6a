"""Run configuration: INI-style ``key = value`` files with one section per stage.

Recognized sections and keys (all optional; missing keys keep the library
defaults)::

    [data]      k, resolution, E, nu, void_eps, delta, beta, alpha, theta,
                min_separation, max_attempts
    [train]     learning_rate, batch_size, max_epochs, patience
    [optimize]  vmax, gamma0, dgamma, learning_rate, filter_radius, tol,
                max_iter, delta, beta, alpha, theta, init_alpha_fraction
    [verify]    resolution

Ranges are written ``lo, hi``.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace

from .dataset import ConfigError, DataConfig
from .homogenize import BaseMaterial
from .optimize import OptConfig
from .surrogate import TrainConfig

RANGE_KEYS = {"delta", "beta", "alpha", "theta"}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    optimize: OptConfig = field(default_factory=OptConfig)
    verify_resolution: int = 120

    def to_dict(self) -> dict:
        return asdict(self)


def _parse_value(key: str, raw: str, default):
    if key in RANGE_KEYS:
        parts = [p for p in raw.replace(",", " ").split()]
        if len(parts) != 2:
            raise ConfigError(f"{key}: expected 'lo, hi', got {raw!r}")
        return (float(parts[0]), float(parts[1]))
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    return float(raw)


def _apply(obj, section, skip=()):
    names = {f.name for f in fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in [{section.name}]")
        updates[key] = _parse_value(key, raw, getattr(obj, key))
    return replace(obj, **updates) if updates else obj


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = set(cp.sections()) - {"data", "train", "optimize", "verify"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = RunConfig()
    if "data" in cp:
        sec = cp["data"]
        # configparser lowercases keys
        mat = {{"e": "E"}.get(k, k): float(v) for k, v in sec.items() if k in ("e", "nu", "void_eps")}
        material = BaseMaterial(**{**asdict(cfg.data.material), **mat})
        ranges = _apply(cfg.data.ranges, sec, skip={"k", "resolution", "e", "nu", "void_eps"})
        top = {}
        if "k" in sec:
            top["k"] = float(sec["k"])
        if "resolution" in sec:
            top["resolution"] = int(sec["resolution"])
        cfg = replace(cfg, data=replace(cfg.data, ranges=ranges, material=material, **top))
        cfg.data.ranges.check()
    if "train" in cp:
        cfg = replace(cfg, train=_apply(cfg.train, cp["train"], skip={"seed"}))
    if "optimize" in cp:
        cfg = replace(cfg, optimize=_apply(cfg.optimize, cp["optimize"]))
    if "verify" in cp:
        cfg = replace(cfg, verify_resolution=int(cp["verify"].get("resolution", "120")))
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return parse_config(fh.read())
