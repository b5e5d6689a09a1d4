"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored; every key may appear at most
once and missing keys take their defaults.  Cell sets (``pattern``,
``tunnel_source``, ``tunnel_target``, ``compare_pattern``) accept

* ``none``
* a space-separated list of ``x,y`` pairs
* ``disc cx cy r``: every cell of the closed disc
* ``disc cx cy r n seed``: ``n`` cells sampled from that disc

``a_min``, ``k_act`` and ``t_relax`` accept ``auto`` for the calibrated
values derived from the geometry and ``p_in``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .cortex import BOUNDARIES, DEFAULT_P_IN, RELAX_MODES, GridGeometry, SimParams
from .errors import (ConfigError, ConfigTypeError, DuplicateKey, ParameterError, RangeError,
                     UnknownKey)
from .trapstats import COMPARISONS, DEFAULT_GAP, MODES, TrapParams


@dataclass(frozen=True)
class CellSpec:
    kind: str = "none"          # none | cells | disc
    values: tuple = ()

    def text(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "cells":
            return " ".join(f"{x},{y}" for x, y in self.values)
        return "disc " + " ".join(_fmt(v) for v in self.values)

    def cells(self, geometry: GridGeometry) -> list[int]:
        """Resolve to sorted cell indices on ``geometry``."""
        if self.kind == "none":
            return []
        if self.kind == "cells":
            return sorted({geometry.index(x, y) for x, y in self.values})
        cx, cy, r = self.values[:3]
        x, y = geometry.xy
        inside = np.flatnonzero((x - cx) ** 2 + (y - cy) ** 2 <= r * r)
        if len(self.values) == 3:
            return inside.tolist()
        n, seed = int(self.values[3]), int(self.values[4])
        if n > inside.size:
            raise ParameterError(f"disc holds {inside.size} cells, cannot sample {n}")
        gen = np.random.default_rng([seed, 0xD15C])
        return sorted(gen.choice(inside, n, replace=False).tolist())

    def center(self, geometry: GridGeometry) -> tuple[float, float]:
        if self.kind == "disc":
            return float(self.values[0]), float(self.values[1])
        cells = self.cells(geometry)
        x, y = geometry.xy
        return float(x[cells].mean()), float(y[cells].mean())


def _fmt(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class RunConfig:
    # trap statistics
    n_neuron: int = 650
    n_source: int = 25000
    n_trap: int = 15
    n_sig: int = 10
    n_dict: int = 10000
    k_limit: int = 5
    map_mode: str = "uniform"
    map_gap: int = DEFAULT_GAP
    comparison: str = "at-least"
    trials: int = 10000
    k_max: int = 10
    # lattice
    width: int = 100
    height: int = 100
    r_obs: float = 8.0
    boundary: str = "walls"
    p_in: float = DEFAULT_P_IN
    a_min: int | None = None
    k_act: int | None = None
    t_relax: int | None = None
    seed: int = 0
    memory_capacity: int = 4096
    relax_mode: str = "neuron"
    pattern: CellSpec = field(default_factory=lambda: CellSpec("disc", (50, 50, 4, 10, 0)))
    compare_pattern: CellSpec = field(default_factory=CellSpec)
    max_emissions: int = 20
    ticks: int = 100
    out: str = "out"
    # tunnel into a second zone
    tunnel_source: CellSpec = field(default_factory=CellSpec)
    tunnel_target: CellSpec = field(default_factory=CellSpec)
    tunnel_permutation: str = "identity"
    tunnel_dropout: float = 0.0
    tunnel_seed: int = 0

    def trap_params(self) -> TrapParams:
        return TrapParams(self.n_neuron, self.n_source, self.n_trap, self.n_sig, self.n_dict, self.k_limit)

    def geometry(self) -> GridGeometry:
        return GridGeometry(self.width, self.height, self.r_obs, self.boundary)

    def sim_params(self) -> SimParams:
        overrides = {k: getattr(self, k) for k in ("a_min", "k_act", "t_relax") if getattr(self, k) is not None}
        return SimParams.calibrated(self.geometry(), p_in=self.p_in, seed=self.seed,
                                    memory_capacity=self.memory_capacity,
                                    relax_mode=self.relax_mode, **overrides)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_INT = "int"
_FLOAT = "float"
_STR = "str"
_AUTO_INT = "auto-int"
_CELLS = "cells"

_KINDS = {
    "n_neuron": _INT, "n_source": _INT, "n_trap": _INT, "n_sig": _INT, "n_dict": _INT,
    "k_limit": _INT, "map_mode": _STR, "map_gap": _INT, "comparison": _STR, "trials": _INT,
    "k_max": _INT, "width": _INT, "height": _INT, "r_obs": _FLOAT, "boundary": _STR,
    "p_in": _FLOAT, "a_min": _AUTO_INT, "k_act": _AUTO_INT, "t_relax": _AUTO_INT, "seed": _INT,
    "memory_capacity": _INT, "relax_mode": _STR, "pattern": _CELLS, "compare_pattern": _CELLS,
    "max_emissions": _INT, "ticks": _INT, "out": _STR, "tunnel_source": _CELLS,
    "tunnel_target": _CELLS, "tunnel_permutation": _STR, "tunnel_dropout": _FLOAT,
    "tunnel_seed": _INT,
}
assert set(_KINDS) == {f.name for f in fields(RunConfig)}

_CHOICES = {
    "map_mode": MODES, "comparison": COMPARISONS, "boundary": BOUNDARIES,
    "relax_mode": RELAX_MODES, "tunnel_permutation": ("identity", "random"),
}


def _parse_int(text: str, line: int, key: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise ConfigTypeError(f"{key} expects an integer, got {text!r}", line) from None


def _parse_float(text: str, line: int, key: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigTypeError(f"{key} expects a number, got {text!r}", line) from None
    if not math.isfinite(value):
        raise RangeError(f"{key} must be finite", line)
    return value


def _parse_cells(text: str, line: int, key: str) -> CellSpec:
    tokens = text.split()
    if tokens == ["none"]:
        return CellSpec()
    if tokens and tokens[0] == "disc":
        if len(tokens) not in (4, 6):
            raise ConfigTypeError(f"{key}: disc takes 'cx cy r' or 'cx cy r n seed'", line)
        cx, cy = (_parse_int(t, line, key) for t in tokens[1:3])
        r = _parse_float(tokens[3], line, key)
        rest = tuple(_parse_int(t, line, key) for t in tokens[4:])
        if r < 0 or (rest and rest[0] < 1):
            raise RangeError(f"{key}: disc radius and sample size must be positive", line)
        return CellSpec("disc", (cx, cy, r) + rest)
    pairs = []
    for tok in tokens:
        parts = tok.split(",")
        if len(parts) != 2:
            raise ConfigTypeError(f"{key}: expected x,y pairs, got {tok!r}", line)
        pairs.append(tuple(_parse_int(p, line, key) for p in parts))
    if not pairs:
        raise ConfigTypeError(f"{key} needs a value", line)
    return CellSpec("cells", tuple(pairs))


def _check_ranges(cfg: RunConfig, lines: dict) -> None:
    def fail(key, msg):
        raise RangeError(f"{key} {msg}", lines.get(key))

    for key in ("n_neuron", "n_source", "n_trap", "n_sig", "n_dict", "k_limit", "map_gap",
                "trials", "width", "height", "memory_capacity", "max_emissions", "ticks"):
        if getattr(cfg, key) < 1:
            fail(key, "must be >= 1")
    for key in ("a_min", "k_act", "t_relax"):
        if getattr(cfg, key) is not None and getattr(cfg, key) < 1:
            fail(key, "must be >= 1 or auto")
    if cfg.max_emissions < 2:
        fail("max_emissions", "must be >= 2")
    if cfg.n_trap > cfg.n_source:
        fail("n_trap", "must not exceed n_source")
    if cfg.n_sig > cfg.n_neuron:
        fail("n_sig", "must not exceed n_neuron")
    if cfg.k_limit > cfg.n_trap:
        fail("k_limit", "must not exceed n_trap")
    if not 0 <= cfg.k_max <= cfg.n_trap:
        fail("k_max", "must lie in [0, n_trap]")
    if not cfg.r_obs > 0:
        fail("r_obs", "must be positive")
    if not 0 < cfg.p_in <= 1:
        fail("p_in", "must lie in (0, 1]")
    if not 0 <= cfg.tunnel_dropout < 1:
        fail("tunnel_dropout", "must lie in [0, 1)")
    for key in ("pattern", "compare_pattern", "tunnel_source", "tunnel_target"):
        spec = getattr(cfg, key)
        pts = spec.values if spec.kind == "cells" else [spec.values[:2]] if spec.kind == "disc" else []
        for x, y in pts:
            if not (0 <= x < cfg.width and 0 <= y < cfg.height):
                fail(key, f"cell ({x}, {y}) outside the {cfg.width}x{cfg.height} grid")


def parse_config(text: str) -> RunConfig:
    """Parse config text; errors carry the 1-based line number."""
    values: dict = {}
    lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigTypeError(f"expected 'key = value', got {body!r}", lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in _KINDS:
            raise UnknownKey(f"unknown key {key!r}", lineno)
        if key in values:
            raise DuplicateKey(f"{key!r} already set on line {lines[key]}", lineno)
        kind = _KINDS[key]
        if kind == _INT:
            parsed = _parse_int(value, lineno, key)
        elif kind == _FLOAT:
            parsed = _parse_float(value, lineno, key)
        elif kind == _AUTO_INT:
            parsed = None if value == "auto" else _parse_int(value, lineno, key)
        elif kind == _CELLS:
            parsed = _parse_cells(value, lineno, key)
        else:
            if not value or any(c.isspace() for c in value):
                raise ConfigTypeError(f"{key} expects a single word", lineno)
            if key in _CHOICES and value not in _CHOICES[key]:
                raise RangeError(f"{key} must be one of {', '.join(_CHOICES[key])}", lineno)
            parsed = value
        values[key] = parsed
        lines[key] = lineno
    cfg = RunConfig(**values)
    _check_ranges(cfg, lines)
    return cfg


def format_config(cfg: RunConfig) -> str:
    """Emit every key; ``parse_config(format_config(c)) == c``."""
    out = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if v is None:
            text = "auto"
        elif isinstance(v, CellSpec):
            text = v.text()
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        out.append(f"{f.name} = {text}")
    return "\n".join(out) + "\n"


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
