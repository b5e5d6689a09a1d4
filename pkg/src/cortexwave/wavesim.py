"""Discrete-time lattice engine.

One tick reads only the previous frame and writes a new one:

1. endogenous neurons start relaxing for ``t_relax`` ticks;
2. relaxing neurons count down and return to quiet;
3. quiet, unclamped neurons seeing at least ``a_min`` active neighbours
   consult their memory: a matching positive trace fires them, a matching
   negative trace keeps them silent, and a novel picture fires them with
   probability ``p_in`` while the picture is recorded as a new trace;
4. evoked clamps are reapplied;
5. tunnel inputs overwrite their target cells.

The random draw for a novel picture is ``rng.uniform(seed, tick, i, fp)``
where ``fp`` fingerprints the observed active set, so a neuron's response is
tied to the picture it sees and not to iteration order.

With ``relax_mode="trace"`` relaxation is attached to traces: whatever its
own state, a neuron may be fired by a positive trace that has not fired
within the last ``t_relax`` ticks, which lets independent wave fronts cross.
The random branch stays blocked while the neuron relaxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .analysis import EmissionRecord, segment_emissions
from .cortex import Frame, GridGeometry, NeuronMemory, NeuronMode, SimParams, is_compact
from .errors import (GeometryMismatch, MemoryCapacityExceeded, NonCompactPattern,
                     NotConverged, ParameterError, SnapshotFormatError, WaveDamped)

QUIET, EVOKED, ENDO, RELAX = (int(m) for m in NeuronMode)
_NEVER = np.iinfo(np.int64).min // 4
SNAPSHOT_VERSION = 1


class TraceBank:
    """All neurons' traces in flat, growable arrays.

    ``members[start[t]:start[t] + length[t]]`` are the cell indices of trace
    ``t``; ``owner``, ``sign`` (+1 positive, -1 negative) and ``fired_at``
    (last tick the trace fired its owner) are per-trace columns.
    """

    def __init__(self, n_cells: int, capacity: int):
        self.n_cells = n_cells
        self.capacity = capacity
        self.n_traces = 0
        self._n_members = 0
        self.members = np.empty(1024, dtype=np.int32)
        self.start = np.empty(256, dtype=np.int64)
        self.length = np.empty(256, dtype=np.int32)
        self.owner = np.empty(256, dtype=np.int32)
        self.sign = np.empty(256, dtype=np.int8)
        self.fired_at = np.empty(256, dtype=np.int64)
        self.per_neuron = np.zeros(n_cells, dtype=np.int32)

    def _view(self, name):
        return getattr(self, name)[: self.n_traces]

    def check_room(self, owners: np.ndarray) -> None:
        if owners.size == 0:
            return
        over = self.per_neuron[owners] + 1 > self.capacity
        if over.any():
            raise MemoryCapacityExceeded(int(owners[over][0]), self.capacity)

    def add(self, owners, signs, members, lengths, fired_at) -> None:
        """Append one trace per owner; ``members`` is the flat concatenation."""
        k = len(owners)
        if k == 0:
            return
        self.check_room(owners)
        need_t, need_m = self.n_traces + k, self._n_members + len(members)
        if need_t > len(self.start):
            size = max(need_t, 2 * len(self.start))
            for name in ("start", "length", "owner", "sign", "fired_at"):
                arr = getattr(self, name)
                grown = np.empty(size, dtype=arr.dtype)
                grown[: self.n_traces] = arr[: self.n_traces]
                setattr(self, name, grown)
        if need_m > len(self.members):
            grown = np.empty(max(need_m, 2 * len(self.members)), dtype=np.int32)
            grown[: self._n_members] = self.members[: self._n_members]
            self.members = grown
        t0 = self.n_traces
        self.members[self._n_members:need_m] = members
        self.start[t0:need_t] = self._n_members + np.concatenate(([0], np.cumsum(lengths)[:-1]))
        self.length[t0:need_t] = lengths
        self.owner[t0:need_t] = owners
        self.sign[t0:need_t] = signs
        self.fired_at[t0:need_t] = fired_at
        np.add.at(self.per_neuron, owners, 1)
        self.n_traces, self._n_members = need_t, need_m

    def overlaps(self, active_ext: np.ndarray, candidate: np.ndarray):
        """Trace ids owned by candidate cells and their active-member counts."""
        sel = np.flatnonzero(candidate[self._view("owner")])
        if sel.size == 0:
            return sel, np.zeros(0, dtype=np.int64)
        lens = self.length[sel].astype(np.int64)
        offsets = np.cumsum(lens) - lens
        pos = np.arange(int(lens.sum())) - np.repeat(offsets, lens) + np.repeat(self.start[sel], lens)
        hits = active_ext[self.members[pos]].astype(np.int64)
        return sel, np.add.reduceat(hits, offsets)

    def trace(self, t: int) -> frozenset[int]:
        s = int(self.start[t])
        return frozenset(self.members[s:s + int(self.length[t])].tolist())

    def neuron(self, i: int) -> NeuronMemory:
        """Materialised copy of one neuron's memory."""
        mem = NeuronMemory(capacity=self.capacity)
        for t in np.flatnonzero(self._view("owner") == i):
            (mem.positive if self.sign[t] > 0 else mem.negative).append(self.trace(int(t)))
        return mem

    def copy(self) -> "TraceBank":
        other = TraceBank(self.n_cells, self.capacity)
        other.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                               for k, v in self.__dict__.items()})
        return other

    def arrays(self) -> dict:
        n, m = self.n_traces, self._n_members
        return {"trace_members": self.members[:m].copy(), "trace_start": self.start[:n].copy(),
                "trace_length": self.length[:n].copy(), "trace_owner": self.owner[:n].copy(),
                "trace_sign": self.sign[:n].copy(), "trace_fired_at": self.fired_at[:n].copy()}

    @classmethod
    def from_arrays(cls, n_cells: int, capacity: int, arrays: dict) -> "TraceBank":
        bank = cls(n_cells, capacity)
        n = len(arrays["trace_owner"])
        bank.members = np.array(arrays["trace_members"], dtype=np.int32)
        bank.start = np.array(arrays["trace_start"], dtype=np.int64)
        bank.length = np.array(arrays["trace_length"], dtype=np.int32)
        bank.owner = np.array(arrays["trace_owner"], dtype=np.int32)
        bank.sign = np.array(arrays["trace_sign"], dtype=np.int8)
        bank.fired_at = np.array(arrays["trace_fired_at"], dtype=np.int64)
        bank.n_traces, bank._n_members = n, len(bank.members)
        bank.per_neuron = np.bincount(bank.owner, minlength=n_cells).astype(np.int32)
        if n == 0:
            bank.__init__(n_cells, capacity)
        return bank


class CortexState:
    """Single-owner mutable simulation state of one cortex zone."""

    def __init__(self, geometry: GridGeometry, params: SimParams, frame: Frame | None = None):
        self.geometry = geometry
        self.params = params
        self.frame = frame if frame is not None else Frame.quiet(geometry)
        n = geometry.n_cells
        self.bank = TraceBank(n, params.memory_capacity)
        self.evoked = np.zeros(n, dtype=bool)
        self.slaved = np.zeros(n, dtype=bool)    # tunnel targets
        self._pending_input: tuple[np.ndarray, np.ndarray] | None = None
        ext = np.zeros(n + 1, dtype=np.uint64)
        ext[:n] = rng.hash64(0x5EED, np.arange(n))
        self._cell_hash = ext

    @property
    def tick(self) -> int:
        return self.frame.tick

    @property
    def evoked_set(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.evoked).tolist())

    def memory(self, i: int) -> NeuronMemory:
        return self.bank.neuron(i)

    def copy(self) -> "CortexState":
        other = CortexState(self.geometry, self.params, self.frame)
        other.bank = self.bank.copy()
        other.evoked = self.evoked.copy()
        other.slaved = self.slaved.copy()
        return other

    def _replace_modes(self, cells: np.ndarray, mode: int) -> None:
        modes, relax = self.frame.modes.copy(), self.frame.relax.copy()
        modes[cells] = mode
        relax[cells] = 0
        self.frame = Frame(self.tick, self.frame.width, self.frame.height, modes, relax)

    def set_evoked(self, *patterns) -> "CortexState":
        """Clamp one or more compact patterns, replacing any previous clamp."""
        groups = [np.array(sorted(set(int(c) for c in pat)), dtype=np.int64) for pat in patterns]
        for cells in groups:
            if not cells.size:
                continue
            if cells.min() < 0 or cells.max() >= self.geometry.n_cells:
                raise ParameterError("evoked pattern has cells outside the grid")
            if not is_compact(self.geometry, cells):
                raise NonCompactPattern(
                    f"pattern of {cells.size} cells does not fit a disc of radius {self.geometry.r_obs}")
        self.clear_evoked()
        for cells in groups:
            self.evoked[cells] = True
        self._replace_modes(np.flatnonzero(self.evoked), EVOKED)
        return self

    def clear_evoked(self) -> "CortexState":
        cells = np.flatnonzero(self.evoked)
        self.evoked[:] = False
        self._replace_modes(cells, QUIET)
        return self

    def step(self) -> Frame:
        p = self.params
        n = self.geometry.n_cells
        t = self.tick
        modes, relax = self.frame.modes, self.frame.relax
        active = np.zeros(n + 1, dtype=bool)
        active[:n] = (modes == EVOKED) | (modes == ENDO)
        nbr = self.geometry.neighbor_table
        # fields are symmetric, so scattering from active cells counts each field
        counts = np.bincount(nbr[active[:n]].ravel(), minlength=n + 1)[:n]

        new_modes = modes.copy()
        new_relax = relax.copy()
        relaxing = modes == RELAX
        new_relax[relaxing] -= 1
        done = relaxing & (relax <= 1)
        new_modes[done] = QUIET
        new_relax[done] = 0
        endo = modes == ENDO
        new_modes[endo] = RELAX
        new_relax[endo] = p.t_relax

        free = ~(self.evoked | self.slaved)
        seeing = free & (counts >= p.a_min)
        quiet_cand = seeing & (modes == QUIET)
        if p.relax_mode == "trace":
            relax_cand = seeing & (relaxing | endo)
        else:
            relax_cand = np.zeros(n, dtype=bool)
        cand = np.zeros(n + 1, dtype=bool)
        cand[:n] = quiet_cand | relax_cand

        sel, ov = self.bank.overlaps(active, cand)
        matched = ov > p.k_act
        owners = self.bank.owner[sel]
        positive = self.bank.sign[sel] > 0
        if p.relax_mode == "trace":
            positive &= t - self.bank.fired_at[sel] > p.t_relax
        fire_traces = sel[matched & positive]
        fire = np.zeros(n, dtype=bool)
        fire[owners[matched & positive]] = True
        suppress = np.zeros(n, dtype=bool)
        suppress[owners[matched & (self.bank.sign[sel] < 0)]] = True

        novel = np.flatnonzero(quiet_cand & ~fire & ~suppress)
        if novel.size:
            seen = nbr[novel]
            mask = active[seen]
            lengths = mask.sum(axis=1)
            members = seen[mask]
            offsets = np.cumsum(lengths) - lengths
            fp = rng.set_fingerprint(self._cell_hash, members, offsets)
            u = rng.uniform(p.seed, t, novel, fp)
            spiked = u < p.p_in
            self.bank.check_room(novel)
            self.bank.add(novel, np.where(spiked, 1, -1), members, lengths,
                          np.where(spiked, t + 1, _NEVER))
            fire[novel[spiked]] = True
        if fire_traces.size:
            self.bank.fired_at[fire_traces] = t + 1

        new_modes[fire] = ENDO
        new_relax[fire] = 0
        new_modes[self.evoked] = EVOKED
        new_relax[self.evoked] = 0
        if self._pending_input is not None:
            targets, values = self._pending_input
            new_modes[targets] = np.where(values, EVOKED, QUIET)
            new_relax[targets] = 0
            self._pending_input = None
        self.frame = Frame(t + 1, self.geometry.width, self.geometry.height, new_modes, new_relax)
        return self.frame

    def run(self, ticks: int) -> list[Frame]:
        if ticks < 1:
            raise ParameterError("ticks must be >= 1")
        return [self.step() for _ in range(ticks)]


@dataclass
class TrainResult:
    state: CortexState
    emissions: int
    canonical: EmissionRecord
    frames: list[Frame] = field(repr=False)


def _emission_budget(state: CortexState) -> int:
    g = state.geometry
    return 2 * (g.width + g.height) + state.params.t_relax + 2


def next_emission(state: CortexState, frames_out: list | None = None) -> EmissionRecord:
    """Step until one complete emission has been produced.

    Raises WaveDamped after ``t_relax`` endogenous-silent ticks.
    """
    silent = 0
    burst: list[Frame] = []
    budget = _emission_budget(state)
    while True:
        frame = state.step()
        if frames_out is not None:
            frames_out.append(frame)
        if frame.endogenous.any():
            burst.append(frame)
            silent = 0
            if len(burst) > budget:
                raise NotConverged(f"emission exceeded {budget} ticks without ending")
        else:
            if burst:
                return segment_emissions(burst, min_gap=1)[0]
            silent += 1
            if silent >= state.params.t_relax:
                raise WaveDamped(f"no endogenous spikes for {silent} ticks at tick {frame.tick}")


def _distance_from_clamp(state: CortexState) -> np.ndarray:
    x, y = state.geometry.xy
    src = np.flatnonzero(state.evoked)
    dx = x[:, None] - x[src][None, :]
    dy = y[:, None] - y[src][None, :]
    if state.geometry.boundary == "torus":
        w, h = state.geometry.width, state.geometry.height
        dx = (dx + w // 2) % w - w // 2
        dy = (dy + h // 2) % h - h // 2
    return np.sqrt(dx * dx + dy * dy).min(axis=1)


def is_damped(state: CortexState, record: EmissionRecord) -> bool:
    """True if the emission never leaves the source neighbourhood.

    A wave that keeps to within ``2 * r_obs`` of the clamped cells on a grid
    that extends further has not propagated, even if its few cells repeat.
    """
    if not state.evoked.any():
        return False
    dist = _distance_from_clamp(state)
    reach = 2 * state.geometry.r_obs
    if not (dist > reach).any():
        return False
    cells = np.fromiter(set().union(*record.sets), dtype=np.int64)
    return cells.size == 0 or dist[cells].max() <= reach


def train(state: CortexState, pattern, max_emissions: int = 20,
          frames_out: list | None = None) -> TrainResult:
    """Clamp ``pattern`` and emit waves until two in a row are identical.

    Raises WaveDamped when an emission falls silent for ``t_relax`` ticks or
    stays inside the source neighbourhood (see :func:`is_damped`).
    """
    if max_emissions < 2:
        raise ParameterError("max_emissions must be >= 2")
    state.set_evoked(pattern)
    prev = None
    for count in range(1, max_emissions + 1):
        frames: list[Frame] = []
        record = next_emission(state, frames)
        if is_damped(state, record):
            raise WaveDamped(f"emission {count} stayed within {2 * state.geometry.r_obs:g} cells of the source")
        if frames_out is not None:
            frames_out.extend(frames)
        if prev is not None and record.same_pattern(prev):
            burst = [f for f in frames if record.start_tick <= f.tick <= record.end_tick]
            return TrainResult(state, count, record, burst)
        prev = record
    raise NotConverged(f"no repeated emission within {max_emissions} emissions")


@dataclass(frozen=True)
class Tunnel:
    """Index mapping copying zone-A activity into zone-B each tick.

    Pair ``k`` copies ``source_region[permutation[k]]`` into
    ``target_region[k]`` unless ``enabled[k]`` is false.
    """

    source_region: tuple
    target_region: tuple
    permutation: tuple
    enabled: tuple
    dropout: float = 0.0

    @classmethod
    def build(cls, source_region, target_region, permutation="identity", dropout=0.0, seed=0):
        src = tuple(sorted(int(c) for c in source_region))
        dst = tuple(sorted(int(c) for c in target_region))
        if len(src) != len(dst) or len(set(src)) != len(src) or len(set(dst)) != len(dst):
            raise ParameterError("tunnel regions must be distinct cells of equal count")
        if not 0 <= dropout < 1:
            raise ParameterError("dropout must lie in [0, 1)")
        gen = np.random.default_rng([seed, 0x7E])
        if permutation == "identity":
            perm = tuple(range(len(src)))
        elif permutation == "random":
            perm = tuple(int(v) for v in gen.permutation(len(src)))
        else:
            perm = tuple(int(v) for v in permutation)
            if sorted(perm) != list(range(len(src))):
                raise ParameterError("permutation must be a bijection on the pairs")
        n_drop = int(round(dropout * len(src)))
        enabled = np.ones(len(src), dtype=bool)
        enabled[gen.permutation(len(src))[:n_drop]] = False
        return cls(src, dst, perm, tuple(bool(e) for e in enabled), dropout)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(source cells, target cells) of the enabled pairs."""
        src = np.array(self.source_region, dtype=np.int64)[list(self.permutation)]
        dst = np.array(self.target_region, dtype=np.int64)
        on = np.array(self.enabled, dtype=bool)
        return src[on], dst[on]


@dataclass
class CoupledPair:
    a: CortexState
    b: CortexState
    tunnel: Tunnel

    def step(self) -> tuple[Frame, Frame]:
        src, dst = self.tunnel.pairs()
        values = self.a.frame.active[src]
        self.b._pending_input = (dst, values)
        return self.a.step(), self.b.step()


def attach_tunnel(a: CortexState, b: CortexState, tunnel: Tunnel) -> CoupledPair:
    for state, region in ((a, tunnel.source_region), (b, tunnel.target_region)):
        if region and (min(region) < 0 or max(region) >= state.geometry.n_cells):
            raise GeometryMismatch("tunnel region outside its zone")
        if not is_compact(state.geometry, region):
            raise GeometryMismatch("tunnel region does not fit a tracking-field disc")
    _, dst = tunnel.pairs()
    b.slaved[:] = False
    b.slaved[dst] = True
    if (b.slaved & b.evoked).any():
        raise GeometryMismatch("tunnel targets overlap zone-B evoked cells")
    return CoupledPair(a, b, tunnel)


def run_coupled(pair: CoupledPair, ticks: int) -> tuple[list[Frame], list[Frame]]:
    if ticks < 1:
        raise ParameterError("ticks must be >= 1")
    fa, fb = [], []
    for _ in range(ticks):
        x, y = pair.step()
        fa.append(x)
        fb.append(y)
    return fa, fb


@dataclass
class CoupledTrainResult:
    pair: CoupledPair
    emissions: int
    canonical_a: EmissionRecord
    canonical_b: EmissionRecord


def coupled_emission(pair: CoupledPair, frames_a: list | None = None,
                     frames_b: list | None = None) -> tuple[EmissionRecord, EmissionRecord]:
    """Advance the pair through one zone-A emission and the zone-B wave it induces.

    The cycle ends at the first tick after A's burst where neither zone has
    an endogenous cell.  B's record is aligned to A's start tick and keeps
    its empty ticks, so records of different cycles compare tick by tick.
    """
    a = pair.a
    budget = _emission_budget(a) + _emission_budget(pair.b)
    silent = 0
    got_a: list[Frame] = []
    got_b: list[Frame] = []
    started = False
    while True:
        fa, fb = pair.step()
        if frames_a is not None:
            frames_a.append(fa)
            frames_b.append(fb)
        busy_a, busy_b = fa.endogenous.any(), fb.endogenous.any()
        if not started:
            if not busy_a:
                silent += 1
                if silent >= a.params.t_relax:
                    raise WaveDamped(f"zone A silent for {silent} ticks at tick {fa.tick}")
                if busy_b:
                    raise NotConverged("zone B active before zone A emitted")
                continue
            started = True
        got_a.append(fa)
        got_b.append(fb)
        if not busy_a and not busy_b:
            break
        if len(got_a) > budget:
            raise NotConverged(f"coupled cycle exceeded {budget} ticks")
    rec_a = segment_emissions(got_a, min_gap=1)[0]
    t0, t1 = got_b[0].tick, got_b[-2].tick if len(got_b) > 1 else got_b[0].tick
    sets = tuple(f.endogenous_set() for f in got_b if f.tick <= t1)
    return rec_a, EmissionRecord(t0, t1, sets)


def train_coupled(pair: CoupledPair, pattern, max_emissions: int = 20) -> CoupledTrainResult:
    """Clamp ``pattern`` in zone A until both zones repeat their waves exactly."""
    if max_emissions < 2:
        raise ParameterError("max_emissions must be >= 2")
    pair.a.set_evoked(pattern)
    prev = None
    for count in range(1, max_emissions + 1):
        rec = coupled_emission(pair)
        if is_damped(pair.a, rec[0]):
            raise WaveDamped(f"zone A emission {count} stayed near its source")
        if prev is not None and rec[0].same_pattern(prev[0]) and rec[1].same_pattern(prev[1]):
            return CoupledTrainResult(pair, count, rec[0], rec[1])
        prev = rec
    raise NotConverged(f"coupled zones did not repeat within {max_emissions} emissions")


def save_snapshot(state: CortexState, path) -> None:
    """Write ``state`` as a versioned ``.npz`` archive."""
    g, p = state.geometry, state.params
    header = {"format": "cortexwave-snapshot", "version": SNAPSHOT_VERSION,
              "geometry": [g.width, g.height, g.r_obs, g.boundary],
              "params": [p.p_in, p.a_min, p.k_act, p.t_relax, p.seed, p.memory_capacity, p.relax_mode],
              "tick": state.tick}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
                 modes=state.frame.modes, relax=state.frame.relax,
                 evoked=state.evoked, slaved=state.slaved, **state.bank.arrays())


def load_snapshot(path) -> CortexState:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != "cortexwave-snapshot" or header.get("version") != SNAPSHOT_VERSION:
            raise SnapshotFormatError(f"unsupported snapshot header {header}")
        w, h, r, boundary = header["geometry"]
        geometry = GridGeometry(int(w), int(h), float(r), boundary)
        params = SimParams(*header["params"])
        frame = Frame(int(header["tick"]), geometry.width, geometry.height,
                      data["modes"].copy(), data["relax"].copy())
        state = CortexState(geometry, params, frame)
        state.evoked = data["evoked"].copy()
        state.slaved = data["slaved"].copy()
        state.bank = TraceBank.from_arrays(geometry.n_cells, params.memory_capacity,
                                           {k: data[k] for k in data.files if k.startswith("trace_")})
    return state
