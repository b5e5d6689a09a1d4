import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cortexwave import rng
from cortexwave.cortex import (Frame, GridGeometry, NeuronMemory, NeuronMode, Recognition, SimParams,
                               recognize, tracking_field)
from cortexwave.errors import (GeometryMismatch, MemoryCapacityExceeded, NonCompactPattern,
                               NotConverged, ParameterError, SnapshotFormatError, WaveDamped)
from cortexwave.wavesim import (CortexState, Tunnel, attach_tunnel, coupled_emission, is_damped,
                                load_snapshot, next_emission, run_coupled, save_snapshot, train,
                                train_coupled)

from conftest import disc_cells, disc_pattern

Q, EV, EN, RX = (int(m) for m in NeuronMode)
MASK = (1 << 64) - 1


class ReferenceEngine:
    """Neuron-by-neuron stepper built on ``recognize``; slow but direct."""

    def __init__(self, geometry, params, cell_hash):
        self.g, self.p = geometry, params
        self.fields = [sorted(tracking_field(geometry, i)) for i in range(geometry.n_cells)]
        self.pos = [[] for _ in range(geometry.n_cells)]    # [trace, fired_at]
        self.neg = [[] for _ in range(geometry.n_cells)]
        self.hash = [int(h) for h in cell_hash[:-1]]

    def step(self, frame, evoked, slaved=(), pending=None):
        p, t = self.p, frame.tick
        modes, relax = frame.modes.tolist(), frame.relax.tolist()
        active = frame.active
        new_modes, new_relax = list(modes), list(relax)
        fired_traces = []
        for i in range(self.g.n_cells):
            m = modes[i]
            if m == RX:
                new_relax[i] = relax[i] - 1
                if relax[i] <= 1:
                    new_modes[i], new_relax[i] = Q, 0
            elif m == EN:
                new_modes[i], new_relax[i] = RX, p.t_relax
            if i in evoked or i in slaved:
                continue
            seen = [j for j in self.fields[i] if active[j]]
            if len(seen) < p.a_min:
                continue
            avail = [e for e in self.pos[i] if p.relax_mode == "neuron" or t - e[1] > p.t_relax]
            mem = NeuronMemory([e[0] for e in avail], self.neg[i])
            if m == Q:
                verdict = recognize(frame, i, mem, p.k_act)
            elif p.relax_mode == "trace" and m in (RX, EN):
                hit = any(sum(active[j] for j in e[0]) > p.k_act for e in avail)
                verdict = Recognition.FIRE if hit else None
            else:
                continue
            if verdict is Recognition.FIRE:
                fired_traces += [e for e in avail if sum(active[j] for j in e[0]) > p.k_act]
                new_modes[i], new_relax[i] = EN, 0
            elif verdict is Recognition.NOVEL:
                fp = sum(self.hash[j] for j in seen) & MASK
                spike = float(rng.uniform(p.seed, t, i, fp)) < p.p_in
                if spike:
                    self.pos[i].append([frozenset(seen), t + 1])
                    new_modes[i], new_relax[i] = EN, 0
                else:
                    self.neg[i].append(frozenset(seen))
        for e in fired_traces:
            e[1] = t + 1
        for i in evoked:
            new_modes[i], new_relax[i] = EV, 0
        if pending is not None:
            for i, v in zip(*pending):
                new_modes[int(i)], new_relax[int(i)] = (EV if v else Q), 0
        return Frame(t + 1, frame.width, frame.height, np.array(new_modes, dtype=np.int8),
                     np.array(new_relax, dtype=np.int16))

    def memory(self, i):
        return sorted(e[0] for e in self.pos[i]), sorted(self.neg[i])


def _vector_memory(state, i):
    mem = state.memory(i)
    return sorted(mem.positive), sorted(mem.negative)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(["walls", "torus"]), st.sampled_from(["neuron", "trace"]),
       st.floats(0.2, 0.6))
def test_vectorised_step_matches_reference(seed, boundary, relax_mode, p_in):
    g = GridGeometry(14, 12, 2.5, boundary)
    p = SimParams(p_in=p_in, a_min=2, k_act=1, t_relax=4, seed=seed, relax_mode=relax_mode)
    state = CortexState(g, p)
    gen = np.random.default_rng(seed)
    state.set_evoked(sorted(gen.choice(disc_cells(g, 6, 6, 2), 4, replace=False).tolist()))
    ref = ReferenceEngine(g, p, state._cell_hash)
    frame = state.frame
    for tick in range(30):
        if tick == 15:      # release the clamp half-way through
            state.clear_evoked()
            frame = state.frame
        expected = ref.step(frame, set(np.flatnonzero(state.evoked).tolist()))
        frame = state.step()
        assert frame == expected, f"tick {tick}"
    for i in range(g.n_cells):
        assert _vector_memory(state, i) == ref.memory(i)


def test_quiet_cortex_is_a_fixed_point():
    g = GridGeometry(10, 10, 2.0)
    frames = CortexState(g, SimParams(0.5, 1, 1, 3)).run(100)
    assert len(frames) == 100
    assert all(not f.modes.any() for f in frames)
    assert [f.tick for f in frames] == list(range(1, 101))


def test_run_composes():
    g = GridGeometry(20, 20, 3.0)
    p = SimParams(0.3, 2, 1, 5, seed=4)
    a, b = CortexState(g, p), CortexState(g, p)
    a.set_evoked(disc_cells(g, 10, 10, 1))
    b.set_evoked(disc_cells(g, 10, 10, 1))
    fa = a.run(7) + a.run(5)
    fb = b.run(12)
    assert fa == fb
    with pytest.raises(ParameterError):
        a.run(0)


def test_certain_spike_fires_every_observer():
    g = GridGeometry(15, 15, 3.0)
    state = CortexState(g, SimParams(1.0, 3, 2, 4))
    pattern = disc_cells(g, 7, 7, 1)
    state.set_evoked(pattern)
    f = state.step()
    counts = np.array([len(tracking_field(g, i) & set(pattern)) for i in range(g.n_cells)])
    expect = (counts >= 3) & ~np.isin(np.arange(g.n_cells), pattern)
    assert np.array_equal(f.endogenous, expect)


def test_relaxation_exclusion_and_clamp_on_small_grid():
    g = GridGeometry(5, 5, 2.0, "torus")
    p = SimParams(0.7, 1, 1, 3, seed=2)
    state = CortexState(g, p)
    state.set_evoked([12])
    frames = state.run(60)
    for i in range(g.n_cells):
        ticks = [f.tick for f in frames if f.endogenous[i]]
        assert all(b - a > p.t_relax + 1 for a, b in zip(ticks, ticks[1:]))
    assert all(f.mode(12) is NeuronMode.EVOKED for f in frames)
    assert any(f.endogenous.any() for f in frames)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.data())
def test_locality(seed, data):
    g = GridGeometry(16, 16, 3.0)
    p = SimParams(0.4, 2, 1, 4, seed=seed)
    base = CortexState(g, p)
    base.set_evoked(disc_cells(g, 8, 8, 1))
    base.run(data.draw(st.integers(1, 6)))
    i = data.draw(st.integers(0, g.n_cells - 1))
    outside = sorted(set(range(g.n_cells)) - tracking_field(g, i) - {i} - base.evoked_set)
    flip = data.draw(st.lists(st.sampled_from(outside), max_size=20))
    other = base.copy()
    modes = other.frame.modes.copy()
    modes[flip] = np.where(modes[flip] == EN, Q, EN)
    other.frame = Frame(other.tick, g.width, g.height, modes, np.where(modes == RX, other.frame.relax, 0))
    assert base.step().modes[i] == other.step().modes[i]


def test_non_compact_pattern_rejected():
    g = GridGeometry(30, 30, 3.0)
    state = CortexState(g, SimParams(0.5, 1, 1, 3))
    with pytest.raises(NonCompactPattern):
        state.set_evoked([g.index(1, 1), g.index(20, 20)])
    state.set_evoked([g.index(1, 1)], [g.index(20, 20)])
    assert state.evoked_set == {g.index(1, 1), g.index(20, 20)}


def test_capacity_overflow_propagates():
    g = GridGeometry(12, 12, 2.5)
    state = CortexState(g, SimParams(0.2, 1, 1, 2, memory_capacity=1))
    state.set_evoked(disc_cells(g, 6, 6, 1))
    with pytest.raises(MemoryCapacityExceeded):
        state.run(20)


def test_endless_burst_is_not_converged():
    g = GridGeometry(12, 12, 1.5, "torus")
    state = CortexState(g, SimParams(1.0, 1, 1, 1))
    state.set_evoked([0])
    with pytest.raises(NotConverged):
        next_emission(state)


def test_train_is_deterministic_and_closed(trained_reference, reference_geometry):
    g = reference_geometry
    again = train(CortexState(g, SimParams.calibrated(g, seed=0)), disc_pattern(g, 50, 50, 4, 10, 0))
    assert again.canonical == trained_reference.canonical
    state = trained_reference.state.copy()
    n = state.bank.n_traces
    assert next_emission(state).same_pattern(trained_reference.canonical)
    assert state.bank.n_traces == n
    with pytest.raises(ParameterError):
        train(state, disc_pattern(g, 50, 50, 4, 10, 0), max_emissions=1)


def test_weak_input_is_damped(reference_geometry):
    g = reference_geometry
    state = CortexState(g, SimParams.calibrated(g, p_in=0.009, a_min=4, k_act=3, seed=1))
    with pytest.raises(WaveDamped):
        train(state, disc_pattern(g, 50, 50, 4, 10, 1))


def test_is_damped_ignores_grids_without_room():
    g = GridGeometry(9, 9, 3.0)
    state = CortexState(g, SimParams(0.5, 1, 1, 20))
    state.set_evoked([40])
    rec = next_emission(state)
    assert not is_damped(state, rec)


# --- tunnels --------------------------------------------------------------

def _zones(size=30, r=3.0):
    g = GridGeometry(size, size, r)
    p = SimParams(0.3, 2, 1, 2 * size)
    return CortexState(g, p), CortexState(g, SimParams(0.3, 2, 1, 2 * size, seed=9))


def test_identity_tunnel_copies_with_one_tick_delay():
    a, b = _zones()
    g = a.geometry
    src, dst = disc_cells(g, 5, 5, 2), disc_cells(g, 20, 20, 2)
    pair = attach_tunnel(a, b, Tunnel.build(src, dst))
    a.set_evoked(src)
    _, fb = pair.step()
    assert fb.active[dst].all()
    assert not b.memory(dst[0]).positive and not b.memory(dst[0]).negative


def test_dropout_leaves_single_pair():
    a, b = _zones()
    g = a.geometry
    src, dst = disc_cells(g, 5, 5, 2), disc_cells(g, 20, 20, 2)
    tunnel = Tunnel.build(src, dst, dropout=1 - 1 / len(src) - 1e-9, seed=3)
    assert sum(tunnel.enabled) == 1
    pair = attach_tunnel(a, b, tunnel)
    a.set_evoked(src)
    _, fb = pair.step()
    assert fb.active[dst].sum() == 1


def test_quiet_source_zone_keeps_target_quiet():
    a, b = _zones()
    g = a.geometry
    pair = attach_tunnel(a, b, Tunnel.build(disc_cells(g, 5, 5, 2), disc_cells(g, 20, 20, 2), "random"))
    fa, fb = run_coupled(pair, 20)
    assert not any(f.modes.any() for f in fb)


def test_tunnel_validation():
    a, b = _zones()
    g = a.geometry
    with pytest.raises(ParameterError):
        Tunnel.build([1, 2], [3])
    with pytest.raises(ParameterError):
        Tunnel.build([1, 2], [3, 4], permutation=[0, 0])
    t = Tunnel.build([1, 2], [3, 4], permutation="random", seed=5)
    assert sorted(t.permutation) == [0, 1]
    with pytest.raises(GeometryMismatch):
        attach_tunnel(a, b, Tunnel.build([0, g.n_cells - 1], [3, 4]))
    with pytest.raises(GeometryMismatch):
        attach_tunnel(a, b, Tunnel.build([1, 2], [g.n_cells, g.n_cells + 1]))


def test_coupled_runs_are_deterministic():
    def go():
        a, b = _zones(40, 3.0)
        g = a.geometry
        pair = attach_tunnel(a, b, Tunnel.build(disc_cells(g, 28, 20, 2), disc_cells(g, 20, 20, 2)))
        a.set_evoked(disc_cells(g, 10, 20, 1))
        return run_coupled(pair, 60)
    assert go() == go()


def test_train_coupled_repeats_zone_b():
    g = GridGeometry(40, 40, 3.0)
    a = CortexState(g, SimParams(0.3, 2, 1, 80, seed=1))
    b = CortexState(g, SimParams(0.3, 2, 1, 80, seed=2))
    pair = attach_tunnel(a, b, Tunnel.build(disc_cells(g, 28, 20, 2), disc_cells(g, 20, 20, 2)))
    result = train_coupled(pair, disc_cells(g, 10, 20, 1))
    _, rec_b = coupled_emission(pair)
    assert rec_b.same_pattern(result.canonical_b)
    assert any(result.canonical_b.sets)


# --- snapshots ------------------------------------------------------------

def test_snapshot_round_trip(tmp_path):
    g = GridGeometry(20, 20, 3.0, "torus")
    state = CortexState(g, SimParams(0.3, 2, 1, 6, seed=8, relax_mode="trace"))
    state.set_evoked(disc_cells(g, 10, 10, 1))
    state.run(9)
    path = tmp_path / "s.npz"
    save_snapshot(state, path)
    loaded = load_snapshot(path)
    assert loaded.frame == state.frame and loaded.params == state.params
    assert loaded.geometry == state.geometry
    assert loaded.run(15) == state.run(15)
    assert [_vector_memory(loaded, i) for i in range(g.n_cells)] == \
           [_vector_memory(state, i) for i in range(g.n_cells)]


def test_snapshot_of_fresh_state(tmp_path):
    g = GridGeometry(6, 6, 2.0)
    state = CortexState(g, SimParams(0.3, 2, 1, 6))
    save_snapshot(state, tmp_path / "s.npz")
    loaded = load_snapshot(tmp_path / "s.npz")
    loaded.set_evoked([14])
    state.set_evoked([14])
    assert loaded.run(10) == state.run(10)


def test_snapshot_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.npz"
    np.savez(path, header=np.frombuffer(b'{"format": "other", "version": 1}', dtype=np.uint8))
    with pytest.raises(SnapshotFormatError):
        load_snapshot(path)
