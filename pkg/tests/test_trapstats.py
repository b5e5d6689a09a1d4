import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cortexwave.errors import (DimensionMismatch, EmptyProfile, InfeasibleSpacing, InvalidRange,
                               ParameterError)
from cortexwave.trapstats import (REFERENCE_P_ERROR, DensityProfile, Dictionary, Signal, SourceMap,
                                  TrapParams, analytic_table, build_source_map, density_profile,
                                  error_comparison, max_trap_density, p_error, p_exact_k, p_tail,
                                  prob_trap_exists, random_dictionary, sharp_transition_scan)

BASE = TrapParams()
MICRO = TrapParams(n_neuron=4, n_source=6, n_trap=2, n_sig=1, n_dict=4, k_limit=1)


def exact_p(params, k):
    q = Fraction(params.n_trap, params.n_neuron)
    return math.comb(params.n_trap, k) * q ** k * (1 - q) ** (params.n_trap - k)


def exact_tail(params, k):
    return sum((exact_p(params, j) for j in range(k, min(params.n_sig, params.n_trap) + 1)), Fraction(0))


def mp_error(params, k):
    with mpmath.workdps(60):
        tail = mpmath.mpf(exact_tail(params, k).numerator) / exact_tail(params, k).denominator
        return 1 - (1 - tail) ** (params.n_dict - 1)


# --- parameters -----------------------------------------------------------

def test_params_validation():
    with pytest.raises(ParameterError):
        TrapParams(n_trap=30000)
    with pytest.raises(ParameterError):
        TrapParams(n_sig=700)
    with pytest.raises(ParameterError):
        TrapParams(k_limit=16)
    with pytest.raises(ParameterError):
        TrapParams(n_dict=0)


# --- source maps ----------------------------------------------------------

def test_single_neuron_map_is_all_ones():
    m = build_source_map(TrapParams(n_neuron=1, n_source=40, n_trap=5, n_sig=1, k_limit=1), seed=3)
    assert np.all(m.assignments == 1)


def test_map_is_deterministic():
    assert build_source_map(BASE, 11) == build_source_map(BASE, 11)
    assert build_source_map(BASE, 11) != build_source_map(BASE, 12)
    assert build_source_map(BASE, 11, "min-spacing") == build_source_map(BASE, 11, "min-spacing")


def test_uniform_map_chi_square():
    m = build_source_map(BASE, seed=2024)
    counts = np.bincount(m.assignments, minlength=BASE.n_neuron + 1)[1:]
    assert counts.mean() == pytest.approx(25000 / 650)
    chi2 = ((counts - counts.mean()) ** 2 / counts.mean()).sum()
    assert stats.chi2.sf(chi2, BASE.n_neuron - 1) > 0.001


@pytest.mark.parametrize("gap", [2, 10, 40])
def test_min_spacing_respects_gap(gap):
    m = build_source_map(BASE, seed=5, mode="min-spacing", gap=gap)
    assert m.min_same_neuron_gap() >= gap
    assert build_source_map(BASE, seed=5).min_same_neuron_gap() < gap


def test_min_spacing_infeasible():
    small = TrapParams(n_neuron=5, n_source=50, n_trap=3, n_sig=2, k_limit=1)
    with pytest.raises(InfeasibleSpacing):
        build_source_map(small, mode="min-spacing", gap=6)
    tight = TrapParams(n_neuron=10, n_source=100, n_trap=3, n_sig=2, k_limit=1)
    with pytest.raises(InfeasibleSpacing):
        build_source_map(tight, mode="min-spacing", gap=10, max_retries=1)


def test_source_map_validation():
    with pytest.raises(ParameterError):
        SourceMap(np.array([1, 2, 5]), 4)
    with pytest.raises(ParameterError):
        SourceMap(np.array([0, 1]), 4)


# --- density profiles -----------------------------------------------------

def test_two_active_sources_in_a_window():
    m = SourceMap(np.array([2, 1, 3, 4, 2, 3]), 4)
    d = density_profile(Signal({1, 4}, 4), m, 4).densities
    assert d.tolist() == [2, 2, 1]


def test_empty_and_saturated_signals():
    m = build_source_map(BASE, 1)
    assert not density_profile(Signal(set(), 650), m, 15).densities.any()
    full = density_profile(Signal(range(1, 651), 650), m, 15)
    assert np.all(full.densities == 15)
    assert max_trap_density(full) == 15


def test_profile_length_and_mismatch():
    m = build_source_map(BASE, 1)
    assert len(density_profile(Signal({1}, 650), m, 15)) == 25000 - 15 + 1
    with pytest.raises(DimensionMismatch):
        density_profile(Signal({1}, 651), m, 15)


def test_max_trap_density():
    assert max_trap_density(DensityProfile(np.array([0, 2, 1]))) == 2
    assert max_trap_density(DensityProfile(np.zeros(4, dtype=int))) == 0
    with pytest.raises(EmptyProfile):
        max_trap_density(DensityProfile(np.array([], dtype=int)))


maps = st.integers(1, 12).flatmap(
    lambda m: st.tuples(st.just(m), st.lists(st.integers(1, m), min_size=1, max_size=60)))


@given(maps, st.data())
def test_density_properties(mp, data):
    n_neuron, assignments = mp
    smap = SourceMap(np.array(assignments), n_neuron)
    n_trap = data.draw(st.integers(1, len(assignments)))
    small = data.draw(st.sets(st.integers(1, n_neuron)))
    big = small | data.draw(st.sets(st.integers(1, n_neuron)))
    d_small = density_profile(Signal(small, n_neuron), smap, n_trap).densities
    d_big = density_profile(Signal(big, n_neuron), smap, n_trap).densities
    assert len(d_small) == len(assignments) - n_trap + 1
    assert d_small.min() >= 0 and d_big.max() <= n_trap
    assert np.all(d_big >= d_small)
    # window-sum identity: each active source counts once per window holding it
    n = len(assignments)
    expected = sum(min(s, n - n_trap) - max(0, s - n_trap + 1) + 1
                   for s in range(n) if assignments[s] in small)
    assert int(d_small.sum()) == expected


# --- Monte Carlo ----------------------------------------------------------

def test_k_zero_is_certain():
    e = prob_trap_exists(BASE, 0, trials=50, seed=1)
    assert e.estimate == 1.0 and e.stderr == 0.0


def test_exactly_never_exceeds_at_least():
    for k in range(6):
        assert (prob_trap_exists(BASE, k, "exactly", 200, 4).estimate
                <= prob_trap_exists(BASE, k, "at-least", 200, 4).estimate)


def test_scan_shares_trials_with_single_estimates():
    rows = sharp_transition_scan(BASE, 6, trials=300, seed=9)
    for r in rows:
        assert r.estimate == prob_trap_exists(BASE, r.k, trials=300, seed=9).estimate
    assert [r.k for r in rows] == list(range(7))


def test_scan_validation():
    with pytest.raises(InvalidRange):
        sharp_transition_scan(BASE, 16, trials=10)
    with pytest.raises(ParameterError):
        prob_trap_exists(BASE, 1, trials=0)
    with pytest.raises(ParameterError):
        prob_trap_exists(BASE, 1, comparison="most")


def _micro_oracle(k, comparison):
    # every map of 6 positions over 4 neurons, every single-neuron signal
    hits = total = 0
    for assignment in itertools.product(range(1, 5), repeat=6):
        for neuron in range(1, 5):
            windows = [sum(assignment[i + j] == neuron for j in range(2)) for i in range(5)]
            ok = any(w >= k for w in windows) if comparison == "at-least" else k in windows
            hits += ok
            total += 1
    return Fraction(hits, total)


@pytest.mark.parametrize("k,comparison", [(1, "at-least"), (2, "at-least"), (1, "exactly"), (0, "exactly")])
def test_micro_instance_matches_enumeration(k, comparison):
    exact = _micro_oracle(k, comparison)
    est = prob_trap_exists(MICRO, k, comparison, trials=20000, seed=31)
    se = math.sqrt(float(exact) * (1 - float(exact)) / est.trials)
    assert abs(est.estimate - float(exact)) <= 3 * se + 1e-12


def test_micro_oracle_closed_form():
    # a 2-wide window covers every position, so density >= 1 somewhere iff the
    # neuron owns any of the six positions
    assert _micro_oracle(1, "at-least") == 1 - Fraction(3, 4) ** 6


def test_larger_signal_does_not_lower_estimates():
    rows10 = sharp_transition_scan(BASE, 8, trials=2000, seed=77)
    rows15 = sharp_transition_scan(TrapParams(n_sig=15), 8, trials=2000, seed=77)
    for a, b in zip(rows10, rows15):
        assert b.estimate >= a.estimate - 3 * math.hypot(a.stderr, b.stderr) - 1e-12


# --- closed forms ---------------------------------------------------------

def test_p_exact_zero_high_precision():
    with mpmath.workdps(50):
        ref = (1 - mpmath.mpf(15) / 650) ** 15
    assert p_exact_k(BASE, 0) == pytest.approx(float(ref), rel=1e-12)
    assert abs(p_exact_k(BASE, 0) - 0.70454) < 1e-4


@pytest.mark.parametrize("params", [BASE, TrapParams(n_neuron=400), TrapParams(n_trap=20),
                                    TrapParams(n_sig=15), MICRO])
def test_p_exact_against_fractions(params):
    for k in range(params.n_trap + 1):
        assert p_exact_k(params, k) == pytest.approx(float(exact_p(params, k)), rel=1e-12, abs=1e-300)
    assert abs(math.fsum(p_exact_k(params, k) for k in range(params.n_trap + 1)) - 1) <= 1e-12


def test_p_exact_degenerate_and_range():
    full = TrapParams(n_neuron=7, n_source=20, n_trap=7, n_sig=3, k_limit=1)
    assert p_exact_k(full, 7) == 1.0
    assert p_exact_k(full, 3) == 0.0
    with pytest.raises(InvalidRange):
        p_exact_k(BASE, 16)
    with pytest.raises(InvalidRange):
        p_exact_k(BASE, -1)


def test_p_tail_as_written():
    assert p_tail(BASE, 0) < 1.0
    assert p_tail(BASE, 0) == pytest.approx(float(exact_tail(BASE, 0)), rel=1e-14)
    assert p_tail(BASE, 10) == p_exact_k(BASE, 10)
    tails = [p_tail(BASE, k) for k in range(11)]
    assert all(a >= b for a, b in zip(tails, tails[1:]))
    for k in range(11):
        assert p_tail(BASE, k) == pytest.approx(float(exact_tail(BASE, k)), rel=1e-12)
    with pytest.raises(InvalidRange):
        p_tail(BASE, 11)


def test_p_error_single_word_dictionary():
    one = TrapParams(n_dict=1)
    assert all(p_error(one, k) == 0.0 for k in range(11))


def test_p_error_zero_tail():
    certain = TrapParams(n_neuron=5, n_source=10, n_trap=5, n_sig=3, k_limit=1)
    assert p_tail(certain, 0) == 0.0
    assert p_error(certain, 0) == 0.0


@pytest.mark.parametrize("k", range(11))
def test_p_error_high_precision(k):
    assert p_error(BASE, k) == pytest.approx(float(mp_error(BASE, k)), rel=1e-10, abs=1e-300)


def test_error_comparison_report():
    rows = error_comparison(BASE)
    assert [r.k for r in rows] == sorted(REFERENCE_P_ERROR)
    assert rows[0].computed > 0.99 and rows[0].reference == 0.00399
    assert all(r.reference is None for r in error_comparison(TrapParams(n_dict=50)))


def test_analytic_table_shape():
    rows = analytic_table(BASE)
    assert len(rows) == 16
    assert rows[10].p_tail is not None and rows[11].p_tail is None


# --- dictionaries ---------------------------------------------------------

def test_random_dictionary():
    params = TrapParams(n_dict=200)
    d = random_dictionary(params, seed=4)
    assert len(d) == 200 and all(len(s) == 10 for s in d.signals)
    assert d == random_dictionary(params, seed=4)
    with pytest.raises(ParameterError):
        Dictionary((Signal({1}, 4), Signal({1}, 4)))
    with pytest.raises(ParameterError):
        random_dictionary(TrapParams(n_neuron=4, n_source=10, n_trap=2, n_sig=2, n_dict=7, k_limit=1))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 15))
def test_estimates_are_deterministic(seed, k):
    p = TrapParams(n_source=600)
    assert prob_trap_exists(p, k, trials=5, seed=seed) == prob_trap_exists(p, k, trials=5, seed=seed)
