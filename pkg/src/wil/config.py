"""Run configuration: flat ``key = value`` files with dotted section prefixes.

Blank lines and ``#`` comments are ignored. Every key must be known; values
are converted to the declared type. Lists are comma separated.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .presets import BumpProfile, PresetParams, TabulatedDensity, TabulatedProfile, default_profile


class ConfigError(ValueError):
    """Malformed line, unknown key or invalid value."""


class MissingConfig(FileNotFoundError):
    pass


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _opt_float(text):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


# key -> (converter, default)
SCHEMA = {
    "preset.kind": (str, "constant_boost"),
    "preset.c": (float, 1.0),
    "preset.K_boost": (float, 1.0),
    "preset.b_boost": (float, 1.0),
    "preset.rate": (float, 1.0),
    "preset.x_th": (float, 1.0),
    "preset.m_theta": (float, 1.0),
    "preset.h_edges": (_floats, ()),
    "preset.h_values": (_floats, ()),
    "preset.kappa": (float, 0.01),
    "preset.k": (float, 1.0),
    "preset.T_season": (float, 1.0),
    "preset.n_profile": (str, "default"),
    "preset.n_edges": (_floats, ()),
    "preset.n_values": (_floats, ()),
    "preset.n_baseline": (float, 0.01),
    "preset.n_heights": (_floats, ()),
    "preset.n_width": (_opt_float, None),
    "preset.gamma_shape": (float, 2.0),
    "preset.gamma_scale": (float, 1.0),
    "grid.status_cells": (int, 400),
    "grid.status_min": (_opt_float, None),
    "grid.status_cap": (_opt_float, None),
    "grid.age_cells": (int, 400),
    "grid.age_cap": (_opt_float, None),
    "grid.hist_cells": (int, 200),
    "grid.hist_age_cells": (int, 100),
    "grid.probe_min": (_opt_float, None),
    "grid.probe_max": (_opt_float, None),
    "grid.probe_count": (int, 12),
    "sim.n": (int, 10000),
    "sim.horizon": (float, 50.0),
    "sim.stamps": (_floats, ()),
    "sim.seed": (int, 0),
    "sim.x0": (_opt_float, None),
    "sim.jumps": (int, 0),
    "solver.tol": (float, 1e-10),
    "solver.max_iter": (int, 100_000),
    "solver.overflow_tol": (float, 1e-6),
    "solver.nodes": (int, 8),
    "evolve.t_end": (_opt_float, None),
    "evolve.stamps": (int, 21),
    "evolve.start": (str, "point"),
    "sweep.b": (_opt_float, None),
    "sweep.c": (_opt_float, None),
    "sweep.gamma": (_opt_float, None),
    "sweep.R": (_opt_float, None),
    "sweep.target": (float, 0.01),
    "sweep.n": (int, 10000),
    "hazard.x_b": (_opt_float, None),
    "hazard.a_max": (_opt_float, None),
    "hazard.points": (int, 201),
    "output.dir": (str, ""),
}

COUNT_KEYS = ("grid.status_cells", "grid.age_cells", "grid.hist_cells", "grid.hist_age_cells", "grid.probe_count",
              "sim.n", "solver.max_iter", "solver.nodes", "evolve.stamps", "sweep.n", "hazard.points")
TOL_KEYS = ("solver.tol", "solver.overflow_tol", "sweep.target")


@dataclass
class RunConfig:
    values: dict
    text: str = ""
    path: str = ""
    explicit: set = field(default_factory=set)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def digest(self):
        return hashlib.sha256(self.text.encode()).hexdigest()

    def preset_params(self):
        v = self.values
        h = None
        if v["preset.h_edges"]:
            h = TabulatedDensity(v["preset.h_edges"], v["preset.h_values"])
        profile = None
        if v["preset.n_profile"] == "tabulated":
            profile = TabulatedProfile(v["preset.n_edges"], v["preset.n_values"])
        elif v["preset.n_profile"] == "bumps":
            T = v["preset.T_season"]
            width = v["preset.n_width"] if v["preset.n_width"] is not None else 0.08 * T
            profile = BumpProfile(v["preset.n_baseline"], v["preset.n_heights"], T, width)
        elif v["preset.n_profile"] == "default":
            if v["preset.kind"] == "seasonal":
                profile = default_profile(v["preset.T_season"], 125.0 * v["preset.kappa"])
        else:
            raise ConfigError(f"preset.n_profile must be default, bumps or tabulated, got {v['preset.n_profile']!r}")
        return PresetParams(
            kind=v["preset.kind"], c=v["preset.c"], K_boost=v["preset.K_boost"], b_boost=v["preset.b_boost"],
            rate=v["preset.rate"], x_th=v["preset.x_th"], m_theta=v["preset.m_theta"], residual_density_h=h,
            kappa=v["preset.kappa"], k=v["preset.k"], n_profile=profile, T_season=v["preset.T_season"],
            gamma_shape=v["preset.gamma_shape"], gamma_scale=v["preset.gamma_scale"],
        )


def parse_config(text, path=""):
    """Parse configuration text; raises :class:`ConfigError` on any problem."""
    values = {k: d for k, (_, d) in SCHEMA.items()}
    explicit = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path or 'config'}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{path or 'config'}:{lineno}: unknown key {key!r}")
        if key in explicit:
            raise ConfigError(f"{path or 'config'}:{lineno}: duplicate key {key!r}")
        conv = SCHEMA[key][0]
        try:
            values[key] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"{path or 'config'}:{lineno}: bad value for {key}: {exc}") from exc
        explicit.add(key)
    _check(values)
    return RunConfig(values, text, path, explicit)


def _check(v):
    for k in COUNT_KEYS:
        if v[k] < 1:
            raise ConfigError(f"{k} must be >= 1")
    for k in TOL_KEYS:
        if not v[k] > 0:
            raise ConfigError(f"{k} must be > 0")
    st = v["sim.stamps"]
    if st and (any(np.diff(st) < 0) or st[0] < 0):
        raise ConfigError("sim.stamps must be sorted and non-negative")
    if st and st[-1] > v["sim.horizon"]:
        raise ConfigError("sim.stamps must not exceed sim.horizon")
    if v["evolve.start"] not in ("point", "stationary"):
        raise ConfigError("evolve.start must be 'point' or 'stationary'")
    if v["sim.seed"] < 0 or v["sim.seed"] >= 2 ** 64:
        raise ConfigError("sim.seed must fit in an unsigned 64-bit integer")
    for k in ("sim.horizon",):
        if not (v[k] > 0 and math.isfinite(v[k])):
            raise ConfigError(f"{k} must be positive and finite")


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError as exc:
        raise MissingConfig(f"config file not found: {path}") from exc
    return parse_config(text, str(path))
