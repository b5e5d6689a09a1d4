"""Grid geometry, neuron states and per-neuron pattern memory.

A neuron ``i`` observes only its tracking field, the lattice cells ``j``
with ``dx**2 + dy**2 < r_obs**2`` (the neuron itself excluded).  Memory is a
pair of trace collections: ``positive`` holds the active-neighbour sets seen
when the neuron fired, ``negative`` those seen when it stayed quiet.

The functions here work on one neuron at a time and favour clarity; the
vectorised engine in :mod:`cortexwave.wavesim` is tested against them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import IndexOutOfRange, MemoryCapacityExceeded, ParameterError

BOUNDARIES = ("walls", "torus")
RELAX_MODES = ("neuron", "trace")
DEFAULT_P_IN = 0.09
A_MIN_FRACTION = 0.25


class NeuronMode(enum.IntEnum):
    QUIET = 0
    EVOKED = 1
    ENDOGENOUS = 2
    RELAXING = 3

    @property
    def symbol(self) -> str:
        return MODE_SYMBOLS[self]


MODE_SYMBOLS = {
    NeuronMode.QUIET: ".",
    NeuronMode.EVOKED: "E",
    NeuronMode.ENDOGENOUS: "S",
    NeuronMode.RELAXING: "r",
}


class Recognition(enum.Enum):
    FIRE = "fire"
    SUPPRESS = "suppress"
    NOVEL = "novel"


@dataclass(frozen=True)
class GridGeometry:
    width: int
    height: int
    r_obs: float
    boundary: str = "walls"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ParameterError("grid must have at least one cell")
        if not self.r_obs > 0:
            raise ParameterError("r_obs must be positive")
        if self.boundary not in BOUNDARIES:
            raise ParameterError(f"boundary must be one of {BOUNDARIES}")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def index(self, x: int, y: int) -> int:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise IndexOutOfRange(f"cell ({x}, {y}) outside {self.width}x{self.height} grid")
        return y * self.width + x

    def coords(self, i: int) -> tuple[int, int]:
        self._check(i)
        return i % self.width, i // self.width

    def _check(self, i: int) -> None:
        if not 0 <= i < self.n_cells:
            raise IndexOutOfRange(f"neuron index {i} outside [0, {self.n_cells})")

    def delta(self, i: int, j: int) -> tuple[int, int]:
        """Coordinate difference ``j - i``, minimal-image on a torus."""
        (xi, yi), (xj, yj) = self.coords(i), self.coords(j)
        dx, dy = xj - xi, yj - yi
        if self.boundary == "torus":
            dx = _wrap(dx, self.width)
            dy = _wrap(dy, self.height)
        return dx, dy

    @cached_property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.arange(self.n_cells)
        return idx % self.width, idx // self.width

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``(n_cells, F)`` int32 table of tracking fields.

        Unused slots (cells cut off by a wall) hold the sentinel ``n_cells``,
        so lookups go through arrays of length ``n_cells + 1``.
        """
        n = self.n_cells
        x, y = self.xy
        r2 = self.r_obs * self.r_obs
        cols = []
        if self.boundary == "walls":
            reach = math.ceil(self.r_obs)
            for dy in range(-reach, reach + 1):
                for dx in range(-reach, reach + 1):
                    if (dx, dy) == (0, 0) or dx * dx + dy * dy >= r2:
                        continue
                    xx, yy = x + dx, y + dy
                    ok = (xx >= 0) & (xx < self.width) & (yy >= 0) & (yy < self.height)
                    cols.append(np.where(ok, yy * self.width + xx, n))
        else:
            # enumerate residues so small tori never list a neighbour twice
            for ry in range(self.height):
                dy = _wrap(ry, self.height)
                for rx in range(self.width):
                    dx = _wrap(rx, self.width)
                    if (rx, ry) == (0, 0) or dx * dx + dy * dy >= r2:
                        continue
                    cols.append(((y + ry) % self.height) * self.width + (x + rx) % self.width)
        if not cols:
            return np.empty((n, 0), dtype=np.int32)
        table = np.stack(cols, axis=1).astype(np.int32)
        table.flags.writeable = False
        return table

    @cached_property
    def field_sizes(self) -> np.ndarray:
        return (self.neighbor_table < self.n_cells).sum(axis=1)

    @property
    def mean_field_size(self) -> float:
        return float(self.field_sizes.mean())


def _wrap(d: int, period: int) -> int:
    d %= period
    return d - period if d > period // 2 else d


def tracking_field(geometry: GridGeometry, i: int) -> frozenset[int]:
    geometry._check(i)
    row = geometry.neighbor_table[i]
    return frozenset(int(j) for j in row[row < geometry.n_cells])


def enclosing_radius(geometry: GridGeometry, cells) -> float:
    """Radius of the smallest disc containing the cell centres."""
    cells = sorted(set(int(c) for c in cells))
    if not cells:
        return 0.0
    base = cells[0]
    pts = [geometry.delta(base, c) for c in cells]
    return _min_enclosing_circle(pts)[2]


def is_compact(geometry: GridGeometry, cells) -> bool:
    return enclosing_radius(geometry, cells) <= geometry.r_obs + 1e-9


def _min_enclosing_circle(points):
    # Welzl, iterative form; input order is deterministic (sorted indices)
    pts = [(float(x), float(y)) for x, y in points]
    c = (pts[0][0], pts[0][1], 0.0)
    for i, p in enumerate(pts):
        if _inside(c, p):
            continue
        c = (p[0], p[1], 0.0)
        for j in range(i):
            q = pts[j]
            if _inside(c, q):
                continue
            c = _circle2(p, q)
            for k in range(j):
                if not _inside(c, pts[k]):
                    c = _circle3(p, q, pts[k])
    return c


def _inside(c, p, eps=1e-9):
    return math.hypot(p[0] - c[0], p[1] - c[1]) <= c[2] + eps


def _circle2(a, b):
    cx, cy = (a[0] + b[0]) / 2, (a[1] + b[1]) / 2
    return cx, cy, math.hypot(a[0] - cx, a[1] - cy)


def _circle3(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-12:
        # collinear: the widest pair decides
        pairs = [_circle2(a, b), _circle2(a, c), _circle2(b, c)]
        return max(pairs, key=lambda t: t[2])
    ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) + (cx * cx + cy * cy) * (ay - by)) / d
    uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) + (cx * cx + cy * cy) * (bx - ax)) / d
    return ux, uy, math.hypot(ax - ux, ay - uy)


@dataclass(frozen=True, eq=False)
class Frame:
    """Immutable snapshot of every neuron's mode at one tick.

    ``relax`` holds the remaining relaxation ticks (0 unless relaxing).
    """

    tick: int
    width: int
    height: int
    modes: np.ndarray
    relax: np.ndarray

    def __post_init__(self):
        for arr in (self.modes, self.relax):
            arr.flags.writeable = False

    @classmethod
    def quiet(cls, geometry: GridGeometry, tick: int = 0) -> "Frame":
        n = geometry.n_cells
        return cls(tick, geometry.width, geometry.height,
                   np.zeros(n, dtype=np.int8), np.zeros(n, dtype=np.int16))

    @classmethod
    def from_modes(cls, geometry: GridGeometry, modes, tick: int = 0, relax=None) -> "Frame":
        modes = np.array(modes, dtype=np.int8).reshape(-1)
        if relax is None:
            relax = np.where(modes == NeuronMode.RELAXING, 1, 0).astype(np.int16)
        return cls(tick, geometry.width, geometry.height, modes, np.array(relax, dtype=np.int16))

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.tick, self.width, self.height) == (other.tick, other.width, other.height) \
            and np.array_equal(self.modes, other.modes) and np.array_equal(self.relax, other.relax)

    __hash__ = None

    @property
    def active(self) -> np.ndarray:
        """Binary state vector: evoked or endogenous."""
        return (self.modes == NeuronMode.EVOKED) | (self.modes == NeuronMode.ENDOGENOUS)

    @property
    def endogenous(self) -> np.ndarray:
        return self.modes == NeuronMode.ENDOGENOUS

    def active_set(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.active).tolist())

    def endogenous_set(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.endogenous).tolist())

    def mode(self, i: int) -> NeuronMode:
        return NeuronMode(int(self.modes[i]))

    def to_text(self) -> str:
        chars = np.array([MODE_SYMBOLS[m] for m in NeuronMode])[self.modes]
        rows = ["".join(r) for r in chars.reshape(self.height, self.width)]
        return "\n".join(rows)


@dataclass
class NeuronMemory:
    positive: list = field(default_factory=list)
    negative: list = field(default_factory=list)
    capacity: int = 1 << 16

    def __len__(self) -> int:
        return len(self.positive) + len(self.negative)


def overlap_match(frame: Frame, trace, k_act: int) -> bool:
    """True iff strictly more than ``k_act`` trace members are active."""
    active = frame.active
    return sum(1 for j in trace if active[j]) > k_act


def recognize(frame: Frame, i: int, memory: NeuronMemory, k_act: int) -> Recognition:
    # positive traces take precedence over negative ones
    if any(overlap_match(frame, m, k_act) for m in memory.positive):
        return Recognition.FIRE
    if any(overlap_match(frame, m, k_act) for m in memory.negative):
        return Recognition.SUPPRESS
    return Recognition.NOVEL


def record_trace(frame: Frame, i: int, fired: bool, memory: NeuronMemory,
                 geometry: GridGeometry) -> NeuronMemory:
    trace = frozenset(j for j in tracking_field(geometry, i) if frame.active[j])
    if not trace:
        raise ParameterError(f"neuron {i} sees no activity; nothing to record")
    if len(memory) + 1 > memory.capacity:
        raise MemoryCapacityExceeded(i, memory.capacity)
    (memory.positive if fired else memory.negative).append(trace)
    return memory


@dataclass(frozen=True)
class SimParams:
    p_in: float
    a_min: int
    k_act: int
    t_relax: int
    seed: int = 0
    memory_capacity: int = 4096
    relax_mode: str = "neuron"

    def __post_init__(self):
        if not 0 < self.p_in <= 1:
            raise ParameterError("p_in must lie in (0, 1]")
        if self.a_min < 1 or self.k_act < 1 or self.t_relax < 1:
            raise ParameterError("a_min, k_act and t_relax must be >= 1")
        if self.memory_capacity < 1:
            raise ParameterError("memory_capacity must be >= 1")
        if self.relax_mode not in RELAX_MODES:
            raise ParameterError(f"relax_mode must be one of {RELAX_MODES}")

    @classmethod
    def calibrated(cls, geometry: GridGeometry, p_in: float = DEFAULT_P_IN, **overrides) -> "SimParams":
        """Thresholds scaled to the expected front population of one field.

        ``n_front = round(p_in * mean field size)``; a cell on the leading
        edge of a wave sees roughly half a field of front, so ``a_min`` is a
        quarter of ``n_front`` and ``k_act`` sits just below it, which keeps
        every recorded trace re-matchable on replay.
        """
        n_front = max(1, round(p_in * geometry.mean_field_size))
        a_min = math.ceil(A_MIN_FRACTION * n_front)
        values = dict(
            p_in=p_in,
            a_min=a_min,
            k_act=max(1, a_min - 1),
            t_relax=default_t_relax(geometry),
        )
        values.update(overrides)
        return cls(**values)


def default_t_relax(geometry: GridGeometry) -> int:
    """Refractory period longer than any wave needs to cross the grid."""
    return geometry.width + geometry.height
