"""Flat key = value run configuration shared by every CLI subcommand.

A config file is plain text, one ``key = value`` per line, ``#`` comments.
Command-line flags override file values. ``$FIXTURES`` in a path expands to
the packaged fixture directory.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError


@dataclass
class RunConfig:
    net: str = ""
    trips: str = ""
    fcs: str = ""
    power: str = ""
    k_paths: int = 4
    latency: str = "bpr"

    charge_energy: float = 50.0
    time_value: float = 2.0
    price_lower: float = 200.0
    price_upper: float = 230.0

    ue_tol: float = 1e-8
    cost_eps: float = 1e-4
    flow_eps: float = 1e-6
    rank_tol: float = 1e-8
    reg_eps: float = 1e-6

    gamma: float = 2.0
    alpha0: float = 1.0
    k_max: int = 50
    epsilon: float = 1e-3
    max_outer: int = 200
    initial_prices: str = "midpoint"   # or comma-separated floats

    grid_lower: str = ""               # comma list; defaults to price bounds
    grid_upper: str = ""
    grid_step: float = 0.1
    grid_cap: int = 1_000_000

    fd_delta: float = 1e-3
    coupled_epsilon: float = 1e-3
    coupled_max_cycles: int = 20

    out_dir: str = "out"
    seed: int = 0
    threads: int = 0                   # 0 = all available cores

    def validate(self) -> None:
        if self.ue_tol >= self.cost_eps:
            raise InputError(
                f"tolerance ordering violated: ue_tol {self.ue_tol} must be "
                f"below cost_eps {self.cost_eps}")
        for name in ("net", "trips", "fcs"):
            value = getattr(self, name)
            if value and not Path(value).exists():
                raise InputError(f"{name} file does not exist: {value}")
        if self.power and not Path(self.power).exists():
            raise InputError(f"power file does not exist: {self.power}")
        if self.latency not in ("bpr", "linear"):
            raise InputError(f"latency must be bpr or linear, got {self.latency!r}")

    def initial_price_vector(self, n_owned: int, lower: np.ndarray,
                             upper: np.ndarray) -> np.ndarray:
        if self.initial_prices.strip() == "midpoint":
            return (lower + upper) / 2.0
        try:
            values = np.array([float(v) for v in self.initial_prices.split(",")])
        except ValueError:
            raise InputError(
                f"initial_prices must be 'midpoint' or comma-separated floats, "
                f"got {self.initial_prices!r}") from None
        if len(values) == 1 and n_owned > 1:
            values = np.full(n_owned, values[0])
        if len(values) != n_owned:
            raise InputError(
                f"initial_prices has {len(values)} entries, expected {n_owned}")
        return values

    def grid_bounds(self, lower: np.ndarray,
                    upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        def parse(text: str, default: np.ndarray) -> np.ndarray:
            if not text.strip():
                return default.copy()
            vals = np.array([float(v) for v in text.split(",")])
            if len(vals) == 1 and len(default) > 1:
                vals = np.full(len(default), vals[0])
            if len(vals) != len(default):
                raise InputError("grid bound length mismatch")
            return vals
        return parse(self.grid_lower, lower), parse(self.grid_upper, upper)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def expand_fixtures(value: str) -> str:
    if "$FIXTURES" in value:
        from .fixtures import fixtures_dir
        return value.replace("$FIXTURES", str(fixtures_dir()))
    return value


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    cfg = RunConfig()
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(p, lineno, f"expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELD_TYPES:
            raise ParseError(p, lineno, f"unknown config key {key!r}")
        try:
            setattr(cfg, key, _coerce(key, expand_fixtures(value)))
        except ValueError:
            raise ParseError(p, lineno, f"bad value for {key}: {value!r}") from None
    return cfg
