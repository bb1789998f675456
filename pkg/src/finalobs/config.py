"""Experiment configuration: JSON schema ``finalobs.config/1`` and the objects it describes."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import observation as obs
from .evolution import TWO_PI, EllipticSymbol, EvolutionFamily, GridSpace, ProjectorFamily, random_field
from .time_sets import TimeSet, fat_cantor, geometric_schedule

SCHEMA = "finalobs.config/1"

DEFAULTS: dict[str, Any] = {
    "grid": {"d": 1, "N": 256, "p": 2},
    "horizon": 1.0,
    "symbol": {"preset": "heat"},
    "sensors": {"kind": "full"},
    "time_set": {"kind": "full"},
    "projector": {"mode": "sharp", "width": 1.0},
    "lambda_grid": [1, 2, 4, 8, 16, 32, 64, 128],
    "ucp_lambda_grid": None,
    "st_grid": [0.0, 0.125, 0.25, 0.5, 0.75, 1.0],
    "monte_carlo": {"trials": 8},
    "mode": "auto",
    "r": [1, 2, "inf"],
    "depth": 8,
    "ucp": {"gamma1": 1.0, "d1_min": 0.01},
    "density": {"relaxed": False, "ell1_fraction": 0.99},
    "batch": {"size": 10, "bandwidth": 8},
    "balance": {"samples": 20},
}


class ConfigError(ValueError):
    """The configuration is malformed or internally inconsistent."""


# sections whose keys are filled in one by one; any other section given in a
# config replaces the default wholesale
_MERGED = ("grid", "monte_carlo", "ucp", "density", "batch", "balance")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if k in _MERGED and isinstance(v, dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def _as_r(v) -> float:
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    r = float(v)
    if not r >= 1:
        raise ConfigError(f"norm exponent r must lie in [1, inf], got {v}")
    return r


@dataclass(frozen=True)
class Config:
    raw: dict
    seed: int

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def section(self, name: str) -> Any:
        return self.raw[name]

    @property
    def r_list(self) -> list[float]:
        return [_as_r(v) for v in self.raw["r"]]

    @property
    def T(self) -> float:
        return float(self.raw["horizon"])

    def space(self) -> GridSpace:
        g = self.raw["grid"]
        p = g.get("p", 2)
        return GridSpace(int(g["d"]), int(g["N"]), _as_r(p))

    def symbol(self) -> EllipticSymbol:
        s = self.raw["symbol"]
        d = int(self.raw["grid"]["d"])
        if s.get("preset") == "heat":
            mesh = s.get("mesh", [0.0, self.T])
            return EllipticSymbol.heat(d, mesh, s.get("diffusivity", 1.0), s.get("lower", 0.0))
        if "preset" in s:
            raise ConfigError(f"unknown symbol preset {s['preset']!r}")
        return EllipticSymbol.from_json({"mesh": [0.0, self.T], **s})

    def family(self) -> EvolutionFamily:
        return EvolutionFamily(self.symbol(), self.space())

    def time_set(self) -> TimeSet:
        ts = self.raw["time_set"]
        kind = ts.get("kind")
        if kind == "full":
            return TimeSet.full(self.T)
        if kind == "intervals":
            return TimeSet.from_intervals(self.T, ts["intervals"])
        if kind == "fat_cantor":
            depth = int(ts["depth"])
            schedule = ts.get("schedule") or geometric_schedule(depth, ts.get("ratio", 0.25))
            return fat_cantor(self.T, depth, schedule, total_per_step=bool(ts.get("total_per_step", False)))
        raise ConfigError(f"unknown time_set kind {kind!r}")

    def sensors(self, E: TimeSet | None = None) -> obs.SensorFamily:
        s = self.raw["sensors"]
        d, T = int(self.raw["grid"]["d"]), self.T
        kind = s.get("kind")
        if kind == "full":
            fam = obs.full(T, d)
        elif kind == "empty":
            fam = obs.empty(T, d)
        elif kind == "stripes":
            fam = obs.stripes(T, d, s.get("period", TWO_PI / 32), s.get("fill", 0.5), s.get("phase", 0.0))
        elif kind == "switching_halves":
            fam = obs.switching_halves(T, d)
        elif kind == "boxes":
            fam = obs.SensorFamily.from_json({"d": d, **s})
        else:
            raise ConfigError(f"unknown sensor kind {kind!r}")
        if s.get("on_E_only"):
            fam = obs.on_set(E or self.time_set(), fam)
        return fam

    def projectors(self) -> ProjectorFamily:
        p = self.raw["projector"]
        return ProjectorFamily(p.get("mode", "sharp"), float(p.get("width", 1.0)))

    def batch(self, size: int | None = None, seed_offset: int = 1) -> list[np.ndarray]:
        b = self.raw["batch"]
        n = int(b["size"] if size is None else size)
        rng = np.random.default_rng([self.seed, seed_offset])
        space = self.space()
        xs = random_field(space, rng, bandwidth=b.get("bandwidth"), size=n)
        return [xs[i] for i in range(n)]


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_config(source: str | Path | dict, seed: int | None = None) -> Config:
    """Parse, default-fill and validate a configuration; ``seed`` overrides the file."""
    if isinstance(source, dict):
        data = copy.deepcopy(source)
    else:
        try:
            data = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    if data.get("schema") != SCHEMA:
        raise ConfigError(f"config schema must be {SCHEMA!r}, got {data.get('schema')!r}")
    if seed is not None:
        data["seed"] = seed
    if "seed" not in data:
        raise ConfigError("config needs a seed")
    raw = _merge(DEFAULTS, data)
    cfg = Config(raw, int(raw["seed"]))
    try:
        cfg.space()
        cfg.r_list
        if raw["mode"] not in ("auto", "general", "full_interval"):
            raise ConfigError(f"unknown mode {raw['mode']!r}")
        cfg.time_set()
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
