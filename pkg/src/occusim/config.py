"""Run configuration: JSON files, ``--set`` overrides, presets and validation."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, InvalidArgument
from .harness import PAYOFFS
from .models import ConstantModel, CranstonLeJan, LocalOccupiedVol, LovParams, OsdeModel, Raimond
from .scheme import TimeGrid

COMMANDS = ("simulate", "converge", "price")

DEFAULTS = {
    "model": {"name": "cranston", "beta": 5.0, "x0": 0.0},
    "grid": {"T": 1.0, "N": 512},
    "partition": {"R": 2.0, "M": 16, "K_list": [4, 8, 16, 32, 64], "origin": None, "anchor": "midpoint"},
    "family": {"J": 64},
    "paths": 1000,
    "seed": 20240601,
    "reference": "oracle",
    "payoff": "asian-floating-call",
    "r_stop": None,
    "radii": None,
    "workers": None,
    "out": "occusim-out",
    "check": {},
}

PRESETS = {
    "cranston-fig5": {
        "command": "converge",
        "model": {"name": "cranston", "beta": 5.0, "x0": 0.0},
        "grid": {"T": 1.0, "N": 512},
        "partition": {"R": 2.0, "K_list": [4, 8, 16, 32, 64]},
        "paths": 8192,
        "reference": "oracle",
        "check": {"state_slope": [-1.3, -0.7], "occ_slope": [-1.3, -0.7], "strictly_decreasing": True},
        "fast": {"paths": 2048,
                 "check": {"state_slope": [-1.4, -0.6], "occ_slope": [-1.4, -0.6], "strictly_decreasing": True}},
    },
    "raimond-fig8": {
        "command": "converge",
        "model": {"name": "raimond", "beta": 5.0, "eps": 0.01, "dim": 2, "x0": [0.0, 0.0]},
        "grid": {"T": 1.0, "N": 512},
        "partition": {"R": 2.0, "K_list": [5, 10, 20, 40]},
        "paths": 2048,
        "reference": 75,
        "check": {"state_slope": [-1.3, -0.6]},
        "fast": {"paths": 512},
    },
    "lov-fig12": {
        "command": "converge",
        "model": {"name": "lov", "alpha": 1.0, "beta": -0.1, "gamma": 0.01, "delta": None,
                  "eps": 0.1, "kappa": 0.0, "x0": 100.0},
        "grid": {"T": 1.0, "N": 512},
        "partition": {"R": 50.0, "origin": 100.0, "K_list": [5, 10, 20, 40, 60]},
        "paths": 2048,
        "reference": 100,
        "check": {},
        "fast": {"paths": 512},
    },
    "asian-fig13": {
        "command": "price",
        "model": {"name": "lov", "alpha": 1.0, "beta": -0.1, "gamma": 0.01, "delta": None,
                  "eps": 0.1, "kappa": 0.0, "x0": 100.0},
        "grid": {"T": 1.0, "N": 512},
        "partition": {"R": 50.0, "origin": 100.0, "K_list": [5, 10, 20, 40, 60]},
        "paths": 16384,
        "reference": 100,
        "payoff": "asian-floating-call",
        "check": {"weak_slope": [-1.4, -0.6], "weak_le_strong": 1.01},
        "fast": {"paths": 4096},
    },
}


def deep_update(base: dict, upd: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "check":
            out[k] = deep_update(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str):
    """``a.b=value`` -> ``(["a", "b"], value)``; the value is JSON when it parses."""
    if "=" not in item:
        raise ConfigError(item, "override must look like key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(cfg: dict, items) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in items or []:
        keys, value = parse_override(item)
        node = cfg
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                node[k] = {}
            node = node[k]
        node[keys[-1]] = value
    return cfg


def load_config(path=None, preset=None, overrides=None, fast=False) -> dict:
    """Merge defaults, an optional preset, an optional file and ``--set`` flags (in that order)."""
    cfg = copy.deepcopy(DEFAULTS)
    file_cfg = {}
    if path is not None:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigError("config", f"cannot read {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON in {path}: {e}") from e
        if not isinstance(file_cfg, dict):
            raise ConfigError("config", "top level must be an object")
    preset = preset or file_cfg.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        p = copy.deepcopy(PRESETS[preset])
        fast_cfg = p.pop("fast", {})
        cfg = deep_update(cfg, p)
        cfg["preset"] = preset
        if fast:
            cfg = deep_update(cfg, fast_cfg)
    cfg = deep_update(cfg, {k: v for k, v in file_cfg.items() if k != "preset"})
    cfg = apply_overrides(cfg, overrides)
    cfg["fast"] = bool(fast)
    return cfg


@dataclass
class RunConfig:
    command: str
    model: OsdeModel
    model_spec: dict
    grid: TimeGrid
    R: float
    M: int
    K_list: list
    origin: object
    anchor: str
    J_fam: int
    paths: int
    seed: int
    reference: object
    payoff: str
    r_stop: float | None
    radii: list | None
    workers: int | None
    out: Path
    check: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def build_model(spec: dict) -> OsdeModel:
    spec = dict(spec)
    name = spec.pop("name", None)
    try:
        if name == "cranston":
            return CranstonLeJan(float(spec.get("beta", 5.0)), float(spec.get("x0", 0.0)))
        if name == "raimond":
            dim = int(spec.get("dim", 2))
            return Raimond(float(spec.get("beta", 5.0)), float(spec.get("eps", 1e-2)), dim,
                           spec.get("x0", [0.0] * dim))
        if name == "lov":
            keys = ("alpha", "beta", "gamma", "delta", "eps", "kappa", "x0")
            return LocalOccupiedVol(LovParams(**{k: spec[k] for k in keys if k in spec}))
        if name == "constant":
            dim = int(spec.get("dim", 1))
            return ConstantModel(dim, spec.get("mu", 0.0), float(spec.get("vol", 1.0)), spec.get("x0"))
    except (InvalidArgument, TypeError, ValueError) as e:
        raise ConfigError("model", str(e)) from e
    raise ConfigError("model.name", f"unknown model {name!r}; choose cranston, raimond, lov or constant")


def _num(cfg, path, cast=float, positive=False):
    node = cfg
    for k in path:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(".".join(path), "missing")
        node = node[k]
    try:
        v = cast(node)
    except (TypeError, ValueError) as e:
        raise ConfigError(".".join(path), f"expected a number, got {node!r}") from e
    if cast is int and v != node:
        raise ConfigError(".".join(path), f"expected an integer, got {node!r}")
    if positive and not v > 0:
        raise ConfigError(".".join(path), "must be positive")
    return v


def validate(cfg: dict, command: str) -> RunConfig:
    """Check every field before any simulation starts."""
    if command not in COMMANDS:
        raise ConfigError("command", f"must be one of {COMMANDS}")
    model = build_model(cfg.get("model", {}))
    grid = TimeGrid(_num(cfg, ["grid", "T"], positive=True), _num(cfg, ["grid", "N"], int, positive=True))
    part = cfg.get("partition", {})
    R = _num(cfg, ["partition", "R"], positive=True)
    M = _num(cfg, ["partition", "M"], int, positive=True) if "M" in part else 16
    K_list = part.get("K_list") or []
    if not isinstance(K_list, list) or not all(isinstance(k, int) and k >= 1 for k in K_list):
        raise ConfigError("partition.K_list", "must be a list of positive integers")
    if sorted(set(K_list)) != K_list:
        raise ConfigError("partition.K_list", "must be strictly ascending")
    anchor = part.get("anchor", "midpoint")
    if anchor not in ("midpoint", "corner"):
        raise ConfigError("partition.anchor", "must be 'midpoint' or 'corner'")
    origin = part.get("origin")
    if origin is not None:
        try:
            import numpy as np
            o = np.broadcast_to(np.asarray(origin, float), (model.dim,))
        except (TypeError, ValueError) as e:
            raise ConfigError("partition.origin", f"must be a number or a length-{model.dim} list") from e
        origin = o.tolist()
    J_fam = _num(cfg, ["family", "J"], int, positive=True)
    paths = _num(cfg, ["paths"], int, positive=True)
    seed = _num(cfg, ["seed"], int)
    if seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    reference = cfg.get("reference", "oracle")
    payoff = cfg.get("payoff", "asian-floating-call")
    if command in ("converge", "price"):
        if len(K_list) < (3 if command == "converge" else 1):
            raise ConfigError("partition.K_list", f"{command} needs at least {3 if command == 'converge' else 1} levels")
    if command == "converge":
        if reference == "oracle":
            if not isinstance(model, CranstonLeJan):
                raise ConfigError("reference", "the exact oracle exists only for the cranston model")
        elif not isinstance(reference, int) or reference <= max(K_list):
            raise ConfigError("reference", "must be 'oracle' or an integer K_bar above every K in K_list")
    if command == "price":
        if not isinstance(reference, int) or reference <= max(K_list):
            raise ConfigError("reference", "price needs an integer K_bar above every K in K_list")
        if payoff not in PAYOFFS:
            raise ConfigError("payoff", f"unknown payoff {payoff!r}; choose from {sorted(PAYOFFS)}")
        if model.dim != 1:
            raise ConfigError("payoff", "the floating-strike Asian payoff needs a one-dimensional model")
    r_stop = cfg.get("r_stop")
    if r_stop is not None:
        r_stop = _num(cfg, ["r_stop"], positive=True)
    radii = cfg.get("radii")
    if radii is not None and (not isinstance(radii, list) or not all(isinstance(r, (int, float)) and r > 0 for r in radii)):
        raise ConfigError("radii", "must be a list of positive numbers")
    workers = cfg.get("workers")
    if workers is not None:
        workers = _num(cfg, ["workers"], int, positive=True)
    check = cfg.get("check") or {}
    if not isinstance(check, dict):
        raise ConfigError("check", "must be an object")
    return RunConfig(command, model, dict(cfg.get("model", {})), grid, R, M, K_list, origin, anchor,
                     J_fam, paths, seed, reference, payoff, r_stop, radii, workers,
                     Path(cfg.get("out", "occusim-out")), check, cfg)
