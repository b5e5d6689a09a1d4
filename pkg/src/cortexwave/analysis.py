"""Metrics over frame sequences.

Every function here is a pure function of its frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryMismatch, InsufficientData, ParameterError


@dataclass(frozen=True)
class EmissionRecord:
    """One wave cycle: endogenous index sets for ticks start..end."""

    start_tick: int
    end_tick: int
    sets: tuple

    def __post_init__(self):
        if self.start_tick > self.end_tick:
            raise ParameterError("emission must start before it ends")

    def __len__(self) -> int:
        return len(self.sets)

    def same_pattern(self, other: "EmissionRecord") -> bool:
        return reproducibility(self, other).identical


def segment_emissions(frames, min_gap: int = 1) -> list[EmissionRecord]:
    """Split endogenous activity into emissions.

    A run of at least ``min_gap`` endogenous-silent ticks closes an
    emission.  With the engine's synchronous update a single silent tick
    already means the previous wave has died out.
    """
    if min_gap < 1:
        raise ParameterError("min_gap must be >= 1")
    out: list[EmissionRecord] = []
    current: list = []
    start = last = None
    silent = 0
    for frame in frames:
        idx = frozenset(np.flatnonzero(frame.endogenous).tolist())
        if idx:
            if current and silent >= min_gap:
                out.append(EmissionRecord(start, last, tuple(current)))
                current = []
            if not current:
                start = frame.tick
            else:
                # short silent stretches stay inside the emission
                current.extend([frozenset()] * silent)
            current.append(idx)
            last = frame.tick
            silent = 0
        else:
            silent += 1
    if current:
        out.append(EmissionRecord(start, last, tuple(current)))
    return out


@dataclass(frozen=True)
class Reproducibility:
    identical: bool
    hamming: tuple

    def __bool__(self) -> bool:
        return self.identical


def reproducibility(e1: EmissionRecord, e2: EmissionRecord) -> Reproducibility:
    """Tick-aligned comparison; missing ticks count as empty sets."""
    n = max(len(e1), len(e2))
    pad = frozenset()
    ham = tuple(len((e1.sets[k] if k < len(e1) else pad) ^ (e2.sets[k] if k < len(e2) else pad))
                for k in range(n))
    return Reproducibility(len(e1) == len(e2) and not any(ham), ham)


def _as_sets(run):
    if isinstance(run, EmissionRecord):
        return list(run.sets)
    return [frozenset(np.flatnonzero(f.endogenous).tolist()) if hasattr(f, "endogenous") else frozenset(f)
            for f in run]


def outside_disc(width: int, height: int, center: tuple[float, float], radius: float) -> np.ndarray:
    """Mask of cells farther than ``radius`` from ``center``; a negative radius keeps all."""
    idx = np.arange(width * height)
    if radius < 0:
        return np.ones(idx.size, dtype=bool)
    x, y = idx % width, idx // width
    return (x - center[0]) ** 2 + (y - center[1]) ** 2 > radius * radius


def jaccard_series(run_a, run_b, keep: np.ndarray | None = None) -> list[float]:
    """Per-tick Jaccard of endogenous sets; empty-vs-empty scores 0."""
    sa, sb = _as_sets(run_a), _as_sets(run_b)
    if keep is not None:
        allowed = frozenset(np.flatnonzero(keep).tolist())
        sa = [s & allowed for s in sa]
        sb = [s & allowed for s in sb]
    n = max(len(sa), len(sb))
    sa += [frozenset()] * (n - len(sa))
    sb += [frozenset()] * (n - len(sb))
    return [len(a & b) / len(a | b) if (a or b) else 0.0 for a, b in zip(sa, sb)]


def uniqueness(run_a, run_b, width: int, height: int, center, radius: float,
               geometry_b: tuple[int, int] | None = None) -> float:
    """Max per-tick Jaccard of endogenous sets outside an exclusion disc."""
    if geometry_b is not None and tuple(geometry_b) != (width, height):
        raise GeometryMismatch("runs come from different grids")
    for run in (run_a, run_b):
        for f in run if not isinstance(run, EmissionRecord) else ():
            if hasattr(f, "width") and (f.width, f.height) != (width, height):
                raise GeometryMismatch("frame does not match the stated grid")
    series = jaccard_series(run_a, run_b, outside_disc(width, height, center, radius))
    return max(series, default=0.0)


def front_speed(frames, origin: tuple[float, float]) -> float:
    """Least-squares slope of max endogenous distance from ``origin`` vs tick."""
    ticks, dist = [], []
    for f in frames:
        idx = np.flatnonzero(f.endogenous)
        if idx.size:
            x, y = idx % f.width, idx // f.width
            ticks.append(f.tick)
            dist.append(float(np.sqrt(((x - origin[0]) ** 2 + (y - origin[1]) ** 2).max())))
    if len(ticks) < 5:
        raise InsufficientData(f"need 5 ticks with endogenous activity, got {len(ticks)}")
    return float(np.polyfit(np.array(ticks, float), np.array(dist), 1)[0])


def max_front_step(frames) -> float:
    """Largest distance from a newly endogenous cell to the nearest active cell one tick earlier.

    Locality of the update bounds this by ``r_obs``.
    """
    worst = 0.0
    for prev, cur in zip(frames, frames[1:]):
        new = np.flatnonzero(cur.endogenous)
        src = np.flatnonzero(prev.active)
        if new.size == 0 or src.size == 0:
            continue
        w = cur.width
        nx, ny = (new % w)[:, None], (new // w)[:, None]
        sx, sy = (src % w)[None, :], (src // w)[None, :]
        d = np.sqrt(((nx - sx) ** 2 + (ny - sy) ** 2).min(axis=1))
        worst = max(worst, float(d.max()))
    return worst


def activity_fraction(frame) -> float:
    return float(np.count_nonzero(frame.endogenous)) / frame.modes.size


def detect_self_excitation(frames, band: float, sustain: int) -> int | None:
    """First tick of the first run of ``sustain`` ticks above ``band``."""
    if not band > 0:
        raise ParameterError("band must be positive")
    run = 0
    for f in frames:
        run = run + 1 if activity_fraction(f) > band else 0
        if run >= sustain:
            return f.tick - sustain + 1
    return None


def crossing_agreement(combined, expected, keep: np.ndarray) -> list[float]:
    """Per-tick fraction of ``keep`` cells whose endogenous state agrees."""
    total = int(np.count_nonzero(keep))
    out = []
    for c, e in zip(combined, expected):
        ce = c.endogenous if hasattr(c, "endogenous") else c
        ee = e.endogenous if hasattr(e, "endogenous") else e
        out.append(1.0 - np.count_nonzero((ce != ee) & keep) / total)
    return out
