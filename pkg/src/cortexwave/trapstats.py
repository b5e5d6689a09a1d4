"""Combinatorics of synaptic traps on one dendrite.

A dendrite carries ``n_source`` transmitter-source positions; each position
belongs to one of ``n_neuron`` surrounding neurons (the source map).  A trap
is a window of ``n_trap`` consecutive positions and its density under a
signal is the number of window positions whose neuron is active.

Neuron indices are 1-based to match the usual notation; cell indices in
the lattice modules are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (DimensionMismatch, EmptyProfile, InfeasibleSpacing, InvalidRange,
                     ParameterError)

MODES = ("uniform", "min-spacing")
COMPARISONS = ("at-least", "exactly")
DEFAULT_GAP = 10

# Identification-error values printed for the base parameters with
# n_dict = 10000; kept for the comparison report only.
REFERENCE_P_ERROR = {3: 0.00399, 4: 1.05e-05, 5: 1.89e-08, 6: 2.33e-11, 7: 0.0}


@dataclass(frozen=True)
class TrapParams:
    n_neuron: int = 650
    n_source: int = 25000
    n_trap: int = 15
    n_sig: int = 10
    n_dict: int = 10000
    k_limit: int = 5

    def __post_init__(self):
        for name in ("n_neuron", "n_source", "n_trap", "n_sig", "n_dict", "k_limit"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ParameterError(f"{name} must be an integer >= 1, got {value!r}")
        if self.n_trap > self.n_source:
            raise ParameterError("n_trap must not exceed n_source")
        if self.n_sig > self.n_neuron:
            raise ParameterError("n_sig must not exceed n_neuron")
        if self.k_limit > self.n_trap:
            raise ParameterError("k_limit must not exceed n_trap")

    @property
    def q(self) -> float:
        """Per-connection chance of landing in a given trap."""
        return self.n_trap / self.n_neuron


@dataclass(frozen=True, eq=False)
class SourceMap:
    assignments: np.ndarray
    n_neuron: int

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        if a.ndim != 1 or a.size == 0:
            raise ParameterError("source map must be a non-empty sequence")
        if a.min() < 1 or a.max() > self.n_neuron:
            raise ParameterError(f"assignments must lie in [1, {self.n_neuron}]")
        a.flags.writeable = False
        object.__setattr__(self, "assignments", a)

    def __len__(self) -> int:
        return self.assignments.size

    def __eq__(self, other):
        if not isinstance(other, SourceMap):
            return NotImplemented
        return self.n_neuron == other.n_neuron and np.array_equal(self.assignments, other.assignments)

    __hash__ = None

    def min_same_neuron_gap(self) -> int | None:
        """Smallest distance between two positions of one neuron, or None."""
        a = self.assignments
        order = np.lexsort((np.arange(a.size), a))
        same = a[order][1:] == a[order][:-1]
        if not same.any():
            return None
        return int(np.diff(order)[same].min())


@dataclass(frozen=True)
class Signal:
    active: frozenset
    n_neuron: int

    def __post_init__(self):
        active = frozenset(int(i) for i in self.active)
        if any(not 1 <= i <= self.n_neuron for i in active):
            raise ParameterError(f"signal indices must lie in [1, {self.n_neuron}]")
        object.__setattr__(self, "active", active)

    def __len__(self) -> int:
        return len(self.active)

    def mask(self) -> np.ndarray:
        """Boolean lookup of length ``n_neuron + 1`` (slot 0 unused)."""
        m = np.zeros(self.n_neuron + 1, dtype=bool)
        m[list(self.active)] = True
        return m


@dataclass(frozen=True)
class Dictionary:
    signals: tuple

    def __post_init__(self):
        if len(set(s.active for s in self.signals)) != len(self.signals):
            raise ParameterError("dictionary signals must be distinct")
        if len({s.n_neuron for s in self.signals}) > 1:
            raise DimensionMismatch("dictionary signals use different index spaces")

    def __len__(self) -> int:
        return len(self.signals)


@dataclass(frozen=True, eq=False)
class DensityProfile:
    densities: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.densities, dtype=np.int64)
        if d.size and d.min() < 0:
            raise ParameterError("densities must be non-negative")
        d.flags.writeable = False
        object.__setattr__(self, "densities", d)

    def __len__(self) -> int:
        return self.densities.size


@dataclass(frozen=True)
class Estimate:
    estimate: float
    stderr: float
    trials: int


def _generator(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream])


def build_source_map(params: TrapParams, seed: int = 0, mode: str = "uniform",
                     gap: int = DEFAULT_GAP, max_retries: int = 1000) -> SourceMap:
    """Draw the position-to-neuron assignment.

    ``min-spacing`` rejects a draw whose neuron already owns a position fewer
    than ``gap`` places back, retrying up to ``max_retries`` times per
    position.
    """
    return SourceMap(_draw_assignments(params, _generator(seed, 0x5A), mode, gap, max_retries),
                     params.n_neuron)


def _draw_assignments(params, gen, mode, gap=DEFAULT_GAP, max_retries=1000) -> np.ndarray:
    n, m = params.n_source, params.n_neuron
    if mode == "uniform":
        return gen.integers(1, m + 1, size=n)
    if mode != "min-spacing":
        raise ParameterError(f"mode must be one of {MODES}")
    if gap < 1:
        raise ParameterError("gap must be >= 1")
    if gap * (n / m) > n:
        raise InfeasibleSpacing(f"gap {gap} cannot be met with {m} neurons")
    out = np.empty(n, dtype=np.int64)
    last = np.full(m + 1, -gap, dtype=np.int64)
    # draws come in blocks to keep the per-position loop cheap
    block = gen.integers(1, m + 1, size=2 * n)
    used = 0
    for pos in range(n):
        for _ in range(max_retries):
            if used == block.size:
                block, used = gen.integers(1, m + 1, size=2 * n), 0
            cand = int(block[used])
            used += 1
            if pos - last[cand] >= gap:
                break
        else:
            raise InfeasibleSpacing(f"no admissible neuron for position {pos} after {max_retries} draws")
        out[pos] = cand
        last[cand] = pos
    return out


def random_signal(params: TrapParams, gen: np.random.Generator) -> Signal:
    return Signal(frozenset((gen.choice(params.n_neuron, params.n_sig, replace=False) + 1).tolist()),
                  params.n_neuron)


def random_dictionary(params: TrapParams, seed: int = 0) -> Dictionary:
    """``n_dict`` distinct random signals of ``n_sig`` active neurons."""
    if params.n_dict > math.comb(params.n_neuron, params.n_sig):
        raise ParameterError("n_dict exceeds the number of distinct signals")
    gen = _generator(seed, 0xD1C7)
    seen: dict = {}
    while len(seen) < params.n_dict:
        s = random_signal(params, gen)
        seen.setdefault(s.active, s)
    return Dictionary(tuple(seen.values()))


def _window_sums(hits: np.ndarray, n_trap: int) -> np.ndarray:
    c = np.concatenate(([0], np.cumsum(hits, dtype=np.int64)))
    return c[n_trap:] - c[:-n_trap]


def density_profile(signal: Signal, source_map: SourceMap, n_trap: int) -> DensityProfile:
    """Active-source count of every window lying fully inside the dendrite."""
    if signal.n_neuron != source_map.n_neuron:
        raise DimensionMismatch(f"signal has {signal.n_neuron} neurons, map has {source_map.n_neuron}")
    if not 1 <= n_trap <= len(source_map):
        raise ParameterError("n_trap must lie in [1, n_source]")
    return DensityProfile(_window_sums(signal.mask()[source_map.assignments], n_trap))


def max_trap_density(profile: DensityProfile) -> int:
    if len(profile) == 0:
        raise EmptyProfile("profile has no windows")
    return int(profile.densities.max())


def _check_trials(trials: int) -> None:
    if isinstance(trials, bool) or int(trials) != trials or trials < 1:
        raise ParameterError("trials must be a positive integer")


def _trial_presence(params: TrapParams, trials: int, seed: int, mode: str, gap: int) -> np.ndarray:
    """``(trials, n_trap + 1)`` table: does trial t have a window of density d?"""
    _check_trials(trials)
    present = np.zeros((trials, params.n_trap + 1), dtype=bool)
    for t in range(trials):
        gen = _generator(seed, t)
        assignments = _draw_assignments(params, gen, mode, gap)
        signal = random_signal(params, gen)
        d = _window_sums(signal.mask()[assignments], params.n_trap)
        present[t, np.unique(d)] = True
    return present


def _estimate(hits: np.ndarray) -> Estimate:
    n = hits.size
    p = float(np.count_nonzero(hits)) / n
    return Estimate(p, math.sqrt(p * (1 - p) / n), n)


def _hits(present: np.ndarray, k: int, comparison: str) -> np.ndarray:
    if comparison == "at-least":
        return present[:, k:].any(axis=1)
    if comparison == "exactly":
        return present[:, k]
    raise ParameterError(f"comparison must be one of {COMPARISONS}")


def prob_trap_exists(params: TrapParams, k: int, comparison: str = "at-least", trials: int = 10000,
                     seed: int = 0, mode: str = "uniform", gap: int = DEFAULT_GAP) -> Estimate:
    """Monte Carlo chance that some window's density matches ``k``.

    Trial ``t`` draws a fresh map and signal from a generator keyed by
    ``(seed, t)``, so the estimate does not depend on evaluation order.
    """
    if not 0 <= k <= params.n_trap:
        raise InvalidRange(f"k={k} outside [0, {params.n_trap}]")
    if comparison not in COMPARISONS:
        raise ParameterError(f"comparison must be one of {COMPARISONS}")
    return _estimate(_hits(_trial_presence(params, trials, seed, mode, gap), k, comparison))


@dataclass(frozen=True)
class ScanRow:
    k: int
    estimate: float
    stderr: float
    trials: int


def sharp_transition_scan(params: TrapParams, k_max: int, trials: int = 10000, seed: int = 0,
                          mode: str = "uniform", comparison: str = "at-least",
                          gap: int = DEFAULT_GAP) -> list[ScanRow]:
    """``prob_trap_exists`` for k = 0..k_max, sharing the trials across k."""
    if not 0 <= k_max <= params.n_trap:
        raise InvalidRange(f"k_max={k_max} outside [0, {params.n_trap}]")
    present = _trial_presence(params, trials, seed, mode, gap)
    rows = []
    for k in range(k_max + 1):
        e = _estimate(_hits(present, k, comparison))
        rows.append(ScanRow(k, e.estimate, e.stderr, e.trials))
    return rows


def p_exact_k(params: TrapParams, k: int) -> float:
    """Binomial chance of exactly ``k`` of ``n_trap`` connections in a trap."""
    n = params.n_trap
    if not 0 <= k <= n:
        raise InvalidRange(f"k={k} outside [0, {n}]")
    q = params.q
    if q >= 1:
        return 1.0 if k == n else 0.0
    return math.comb(n, k) * q ** k * (1 - q) ** (n - k)


def p_tail(params: TrapParams, k: int) -> float:
    """Sum of ``p_exact_k`` from ``k`` up to ``n_sig`` (not ``n_trap``)."""
    if not 0 <= k <= params.n_sig:
        raise InvalidRange(f"k={k} outside [0, {params.n_sig}]")
    top = min(params.n_sig, params.n_trap)
    return math.fsum(p_exact_k(params, j) for j in range(k, top + 1))


def p_error(params: TrapParams, k: int) -> float:
    """Chance that another of the ``n_dict - 1`` signals reaches density ``k``."""
    tail = p_tail(params, k)
    others = params.n_dict - 1
    if others == 0 or tail == 0:
        return 0.0
    if tail >= 1:
        return 1.0
    return -math.expm1(others * math.log1p(-tail))


@dataclass(frozen=True)
class AnalyticRow:
    k: int
    p_exact: float
    p_tail: float | None
    p_error: float | None


def analytic_table(params: TrapParams) -> list[AnalyticRow]:
    """Closed-form values for k = 0..n_trap; tail columns stop at n_sig."""
    rows = []
    for k in range(params.n_trap + 1):
        if k <= params.n_sig:
            rows.append(AnalyticRow(k, p_exact_k(params, k), p_tail(params, k), p_error(params, k)))
        else:
            rows.append(AnalyticRow(k, p_exact_k(params, k), None, None))
    return rows


@dataclass(frozen=True)
class ErrorComparison:
    k: int
    computed: float
    reference: float | None


def error_comparison(params: TrapParams) -> list[ErrorComparison]:
    """Computed ``p_error`` next to the printed reference values.

    The reference column only applies to the base parameters with
    ``n_dict = 10000``; for any other parameters it is empty.  The two
    columns are not expected to agree: the computed values follow the
    binomial with ``q = n_trap / n_neuron`` and are close to 1 at k = 3,
    while the printed ones fall off like a binomial over ``n_sig`` trials
    with ``q`` near ``1 / n_neuron``.
    """
    base = params == TrapParams()
    ks = sorted(REFERENCE_P_ERROR) if base else range(params.n_sig + 1)
    return [ErrorComparison(k, p_error(params, k), REFERENCE_P_ERROR[k] if base else None)
            for k in ks if k <= params.n_sig]
