"""Run configuration: loading, validation, hashing and sweep expansion.

A run file (YAML or JSON) has the blocks::

    model:    {model: tight-binding, L: 16, J: 1.0, gamma: 0.5, ...}
    schedule: {dt: 0.01, t_f: 100.0, t_0: null, stride: 10}
    ensemble: {N_r: 48, master_seed: 0}
    sweep:    {L: [16, 32], gamma: [0.5, 1.0]}
    output:   {directory: runs/example, formats: [csv, json]}

Sweep lists are expanded as a cartesian product over the keys in sorted order;
every resulting point is the model block with those keys replaced.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import yaml

from .errors import ConfigError

MODELS = ("tight-binding", "kitaev-onsite", "kitaev-longrange", "tv", "syk", "ladder")

MODEL_DEFAULTS = {
    "tight-binding": {"J": 1.0, "gamma": 0.5, "ell": "L/2"},
    "kitaev-onsite": {"J": 1.0, "h": 0.0, "gamma": 0.5, "ell": "L/4"},
    "kitaev-longrange": {"J": 1.0, "h": 0.5, "gamma": 0.1, "alpha": 1.0, "ell": "L/2"},
    "tv": {"t": 1.0, "W": 1.0, "V": 1.0, "gamma": 0.1, "ell": "L/2", "propagator": "krylov"},
    "syk": {"J": 1.0, "gamma": 0.1, "coupling_seed": None, "ell": "L/2", "propagator": "krylov"},
    "ladder": {"t1": 1.0, "t2": 1.0, "t12": 1.5707963267948966, "p1": 0.1, "p2": 0.1,
               "tau_u": 1.0, "N_st": 250, "m": 5, "ell": "L/2"},
}

MODEL_OBSERVABLES = {
    "tight-binding": ("entropy",),
    "kitaev-onsite": ("entropy",),
    "kitaev-longrange": ("entropy",),
    "tv": ("entropy", "ipr", "ln_ipr"),
    "syk": ("entropy", "ipr", "ln_ipr"),
    "ladder": ("fln",),
}

SIZE_LIMITS = {"tv": 22, "syk": 20}
SWEEPABLE = ("L", "gamma", "alpha", "h", "p1", "p2", "t2", "W", "V", "J")


@dataclass(frozen=True)
class Schedule:
    dt: float = 0.01
    t_f: float = 10.0
    t_0: float | None = None
    stride: int = 1


@dataclass(frozen=True)
class Ensemble:
    N_r: int = 48
    master_seed: int = 0


@dataclass
class RunConfig:
    model: dict
    schedule: Schedule = field(default_factory=Schedule)
    ensemble: Ensemble = field(default_factory=Ensemble)
    sweep: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @property
    def model_name(self) -> str:
        return self.model["model"]

    def to_dict(self) -> dict:
        return {
            "model": dict(self.model),
            "schedule": vars(self.schedule).copy(),
            "ensemble": vars(self.ensemble).copy(),
            "sweep": {k: list(v) for k, v in self.sweep.items()},
            "output": dict(self.output),
        }

    def physics_dict(self) -> dict:
        """Everything that determines the numbers (the output block is excluded)."""
        d = self.to_dict()
        d.pop("output")
        return d

    def points(self) -> list[dict]:
        """Expand the sweep block into fully specified model parameter sets."""
        if not self.sweep:
            return [dict(self.model)]
        # sorted, so that a config and its manifest copy (stored with sorted keys) number points alike
        keys = sorted(self.sweep)
        pts = []
        for combo in product(*(self.sweep[k] for k in keys)):
            p = dict(self.model)
            p.update(zip(keys, combo))
            _check_point(p)
            pts.append(p)
        return pts


def config_hash(cfg: RunConfig) -> str:
    """Git-style blob hash of the canonical JSON of the physics blocks."""
    body = json.dumps(cfg.physics_dict(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def _number(block, key, kind=float, minimum=None, strict=False, allow_none=False):
    val = block.get(key)
    if val is None and allow_none:
        return None
    try:
        val = kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a {kind.__name__}, got {val!r}") from None
    if minimum is not None and (val < minimum or (strict and val == minimum)):
        raise ConfigError(f"{key}={val} must be {'>' if strict else '>='} {minimum}")
    return val


def _check_point(p: dict):
    name = p["model"]
    L = p.get("L")
    if not isinstance(L, int) or isinstance(L, bool) or L < 2:
        raise ConfigError(f"L must be an integer >= 2, got {L!r}")
    if name in SIZE_LIMITS and L > SIZE_LIMITS[name]:
        raise ConfigError(f"{name} is limited to L <= {SIZE_LIMITS[name]}")
    if name != "ladder" and L % 2:
        raise ConfigError(f"{name} runs at half filling and needs even L")
    if name != "ladder":
        _number(p, "gamma", minimum=0.0)
    if name == "kitaev-longrange":
        _number(p, "alpha", minimum=0.0)
    if name == "ladder":
        for key in ("p1", "p2"):
            v = _number(p, key)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{key}={v} outside [0, 1]")
        _number(p, "N_st", int, minimum=0)
        _number(p, "m", int, minimum=1)
        _number(p, "tau_u", minimum=0.0)


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(raw) - {"model", "schedule", "ensemble", "sweep", "output"}
    if unknown:
        raise ConfigError(f"unknown top-level blocks: {sorted(unknown)}")
    model = raw.get("model")
    if not isinstance(model, dict) or model.get("model") not in MODELS:
        raise ConfigError(f"model block must name one of {MODELS}")
    full = copy.deepcopy(MODEL_DEFAULTS[model["model"]])
    full.update(model)
    sched = raw.get("schedule") or {}
    if model["model"] == "ladder":
        schedule = Schedule()
    else:
        schedule = Schedule(
            dt=_number(sched, "dt", minimum=0.0, strict=True),
            t_f=_number(sched, "t_f", minimum=0.0, strict=True),
            t_0=_number(sched, "t_0", minimum=0.0, allow_none=True),
            stride=_number({"stride": sched.get("stride", 1)}, "stride", int, minimum=1),
        )
        if schedule.t_0 is not None and schedule.t_0 >= schedule.t_f:
            raise ConfigError("t_0 must be below t_f")
    ens = raw.get("ensemble") or {}
    ensemble = Ensemble(
        N_r=_number({"N_r": ens.get("N_r", 48)}, "N_r", int, minimum=1),
        master_seed=_number({"s": ens.get("master_seed", 0)}, "s", int, minimum=0),
    )
    sweep = raw.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ConfigError("sweep block must be a mapping of lists")
    for k, v in sweep.items():
        if k not in SWEEPABLE:
            raise ConfigError(f"cannot sweep over {k!r}; allowed: {SWEEPABLE}")
        if not isinstance(v, list):
            raise ConfigError(f"sweep entry {k!r} must be a list")
    cfg = RunConfig(full, schedule, ensemble, {k: list(v) for k, v in sweep.items()},
                    dict(raw.get("output") or {}))
    if "L" not in sweep:
        _check_point(full)
    cfg.points()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return from_dict(raw)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    return RunConfig(dict(cfg.model), Schedule(**vars(cfg.schedule)),
                     Ensemble(cfg.ensemble.N_r, int(seed)), dict(cfg.sweep), dict(cfg.output))
