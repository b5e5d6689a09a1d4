"""Command-line driver.

``cortexwave [--config PATH] [--seed N] [--out DIR] COMMAND ...``

Commands: ``trap-stats``, ``simulate``, ``tunnel``, ``analyze``.  Exit codes:
0 success, 2 configuration or usage error, 3 damped wave, 4 training did
not converge, 5 internal error.

Frame files (``frame_%06d.txt``) hold ``P-WAVE 1``, then ``tick W H``, then
``H`` rows of ``W`` mode characters (``.`` quiet, ``E`` evoked, ``S``
endogenous, ``r`` relaxing), LF line endings.  Metrics go to
``metrics.csv`` in long form ``metric,run_a,run_b,tick,value``; an existing
file is appended to.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import analysis, trapstats
from .config import RunConfig, load_config
from .cortex import MODE_SYMBOLS, Frame, NeuronMode
from .errors import (ConfigError, CortexWaveError, DimensionMismatch, EmptyProfile,
                     GeometryMismatch, InfeasibleSpacing, InvalidRange, NonCompactPattern,
                     NotConverged, ParameterError, SnapshotFormatError, WaveDamped)
from .wavesim import (CortexState, Tunnel, attach_tunnel, coupled_emission, next_emission,
                      run_coupled, train, train_coupled)

EXIT_OK, EXIT_CONFIG, EXIT_DAMPED, EXIT_NOT_CONVERGED, EXIT_INTERNAL = 0, 2, 3, 4, 5
FRAME_MAGIC = "P-WAVE 1"
METRICS_HEADER = ("metric", "run_a", "run_b", "tick", "value")

_CONFIG_ERRORS = (ConfigError, ParameterError, DimensionMismatch, EmptyProfile, InvalidRange,
                  InfeasibleSpacing, NonCompactPattern, GeometryMismatch, SnapshotFormatError)
_SYMBOL_TO_MODE = {s: int(m) for m, s in MODE_SYMBOLS.items()}


# frame files

def frame_text(frame: Frame) -> str:
    return f"{FRAME_MAGIC}\n{frame.tick} {frame.width} {frame.height}\n{frame.to_text()}\n"


def write_frame(frame: Frame, directory) -> Path:
    path = Path(directory) / f"frame_{frame.tick:06d}.txt"
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(frame_text(frame))
    return path


def write_frames(frames, directory) -> None:
    Path(directory).mkdir(parents=True, exist_ok=True)
    for f in frames:
        write_frame(f, directory)


def read_frame(path) -> Frame:
    with open(path, encoding="ascii", newline="") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != FRAME_MAGIC:
        raise SnapshotFormatError(f"{path}: missing '{FRAME_MAGIC}' header")
    try:
        tick, w, h = (int(v) for v in lines[1].split())
    except (IndexError, ValueError):
        raise SnapshotFormatError(f"{path}: bad 'tick W H' line") from None
    rows = lines[2:2 + h]
    if len(rows) != h or any(len(r) != w for r in rows) or lines[2 + h:] != [""]:
        raise SnapshotFormatError(f"{path}: expected {h} rows of {w} characters")
    try:
        modes = np.array([_SYMBOL_TO_MODE[c] for r in rows for c in r], dtype=np.int8)
    except KeyError as exc:
        raise SnapshotFormatError(f"{path}: unknown mode character {exc.args[0]!r}") from None
    relax = (modes == NeuronMode.RELAXING).astype(np.int16)
    return Frame(tick, w, h, modes, relax)


def read_frames(directory) -> list[Frame]:
    paths = sorted(Path(directory).glob("frame_*.txt"))
    if not paths:
        raise ParameterError(f"no frame files in {directory}")
    return [read_frame(p) for p in paths]


# metrics

class Metrics:
    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, metric, value, run_a="", run_b="", tick="") -> None:
        if isinstance(value, (bool, np.bool_)):
            value = int(value)
        if isinstance(value, (float, np.floating)):
            value = repr(float(value))
        self.rows.append((metric, run_a, run_b, tick, value))

    def write(self, directory) -> Path:
        path = Path(directory) / "metrics.csv"
        new = not path.exists()
        with open(path, "a", encoding="ascii", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(METRICS_HEADER)
            w.writerows(self.rows)
        return path


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else repr(float(v)) if isinstance(v, float) else v for v in row])


# commands

def cmd_trap_stats(cfg: RunConfig, out: Path, k_max: int | None = None, trials: int | None = None,
                   analytic_only: bool = False) -> int:
    params = cfg.trap_params()
    out.mkdir(parents=True, exist_ok=True)
    if not analytic_only:
        k_max = cfg.k_max if k_max is None else k_max
        rows = trapstats.sharp_transition_scan(params, k_max, cfg.trials if trials is None else trials,
                                               cfg.seed, cfg.map_mode, cfg.comparison, cfg.map_gap)
        _write_csv(out / "scan.csv", ("k", "estimate", "stderr", "trials"),
                   [(r.k, r.estimate, r.stderr, r.trials) for r in rows])
    _write_csv(out / "analytic.csv", ("k", "p_exact", "p_tail", "p_error"),
               [(r.k, r.p_exact, r.p_tail, r.p_error) for r in trapstats.analytic_table(params)])
    _write_csv(out / "error_comparison.csv", ("k", "computed", "reference"),
               [(r.k, r.computed, r.reference) for r in trapstats.error_comparison(params)])
    return EXIT_OK


def _state(cfg: RunConfig) -> CortexState:
    return CortexState(cfg.geometry(), cfg.sim_params())


def _activity_rows(metrics: Metrics, frames, run: str) -> None:
    for f in frames:
        metrics.add("activity_fraction", analysis.activity_fraction(f), run, "", f.tick)


def cmd_simulate(cfg: RunConfig, out: Path, ticks: int | None = None, do_train: bool = False,
                 dump_frames: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    state = _state(cfg)
    geometry = state.geometry
    pattern = cfg.pattern.cells(geometry)
    frames: list[Frame] = []
    metrics = Metrics()
    try:
        if do_train:
            if not pattern:
                raise ParameterError("training needs a non-empty pattern")
            result = train(state, pattern, cfg.max_emissions, frames_out=frames)
            before = state.bank.n_traces
            replay = next_emission(state, frames)
            rep = analysis.reproducibility(result.canonical, replay)
            metrics.add("train_emissions", result.emissions, "sim")
            metrics.add("emission_length", len(result.canonical), "sim")
            metrics.add("reproducibility_identical", rep.identical, "canonical", "replay")
            for k, h in enumerate(rep.hamming):
                metrics.add("hamming", h, "canonical", "replay", replay.start_tick + k)
            metrics.add("replay_new_traces", state.bank.n_traces - before, "replay")
            burst = [f for f in frames if replay.start_tick <= f.tick <= replay.end_tick]
            try:
                metrics.add("front_speed", analysis.front_speed(burst, cfg.pattern.center(geometry)), "replay")
            except CortexWaveError:
                pass
        else:
            if pattern:
                state.set_evoked(pattern)
            frames = state.run(cfg.ticks if ticks is None else ticks)
        metrics.add("memory_traces", state.bank.n_traces, "sim")
        _activity_rows(metrics, frames, "sim")
    finally:
        if dump_frames:
            write_frames(frames, out / "frames")
        metrics.write(out)
    return EXIT_OK


def _pair(cfg_a: RunConfig, cfg_b: RunConfig, pattern_b):
    a, b = _state(cfg_a), _state(cfg_b)
    src = cfg_a.tunnel_source.cells(a.geometry)
    dst = cfg_a.tunnel_target.cells(b.geometry)
    if not src:
        raise ParameterError("tunnel_source must name at least one cell")
    tunnel = Tunnel.build(src, dst, cfg_a.tunnel_permutation, cfg_a.tunnel_dropout, cfg_a.tunnel_seed)
    if pattern_b:
        b.set_evoked(pattern_b)
    return attach_tunnel(a, b, tunnel)


def cmd_tunnel(cfg_a: RunConfig, cfg_b: RunConfig, out: Path, ticks: int | None = None,
               do_train: bool = False, dump_frames: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    pattern_b = cfg_b.pattern.cells(cfg_b.geometry())
    pair = _pair(cfg_a, cfg_b, pattern_b)
    pattern_a = cfg_a.pattern.cells(pair.a.geometry)
    metrics = Metrics()
    fa: list[Frame] = []
    fb: list[Frame] = []
    try:
        if do_train:
            if not pattern_a:
                raise ParameterError("training needs a non-empty zone-A pattern")
            result = train_coupled(pair, pattern_a, cfg_a.max_emissions)
            _, replay_b = coupled_emission(pair, fa, fb)
            metrics.add("tunnel_train_emissions", result.emissions, "a")
            metrics.add("b_repeat_identical", replay_b.same_pattern(result.canonical_b), "b", "b_replay")
            if cfg_a.compare_pattern.kind != "none":
                other = _pair(cfg_a, cfg_b, pattern_b)
                alt = train_coupled(other, cfg_a.compare_pattern.cells(other.a.geometry), cfg_a.max_emissions)
                gb = pair.b.geometry
                center = cfg_a.tunnel_target.center(gb)
                j = analysis.uniqueness(result.canonical_b, alt.canonical_b, gb.width, gb.height,
                                        center, 2 * gb.r_obs)
                metrics.add("b_cross_pattern_jaccard", j, "pattern", "compare_pattern")
        else:
            if pattern_a:
                pair.a.set_evoked(pattern_a)
            fa, fb = run_coupled(pair, cfg_a.ticks if ticks is None else ticks)
        _activity_rows(metrics, fa, "a")
        _activity_rows(metrics, fb, "b")
    finally:
        if dump_frames:
            write_frames(fa, out / "a")
            write_frames(fb, out / "b")
        metrics.write(out)
    return EXIT_OK


def _parse_point(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_analyze(run_a: Path, run_b: Path | None, out: Path, origin=None, exclude=None,
                band: float = 0.5, sustain: int = 5) -> int:
    out.mkdir(parents=True, exist_ok=True)
    fa = read_frames(run_a)
    metrics = Metrics()
    na = run_a.name
    _activity_rows(metrics, fa, na)
    if origin is None:
        first = next((f for f in fa if f.active.any()), fa[0])
        idx = np.flatnonzero(first.active)
        origin = (float((idx % first.width).mean()), float((idx // first.width).mean())) if idx.size else (0.0, 0.0)
    try:
        metrics.add("front_speed", analysis.front_speed(fa, origin), na)
    except CortexWaveError:
        pass
    metrics.add("max_front_step", analysis.max_front_step(fa), na)
    onset = analysis.detect_self_excitation(fa, band, sustain)
    metrics.add("self_excitation_tick", "" if onset is None else onset, na)
    emissions_a = analysis.segment_emissions(fa)
    metrics.add("emissions", len(emissions_a), na)
    if run_b is not None:
        fb = read_frames(run_b)
        nb = run_b.name
        w, h = fa[0].width, fa[0].height
        if (fb[0].width, fb[0].height) != (w, h):
            raise GeometryMismatch("runs come from different grids")
        keep = None
        center, radius = (0.0, 0.0), -1.0
        if exclude is not None:
            center, radius = (exclude[0], exclude[1]), exclude[2]
            keep = analysis.outside_disc(w, h, center, radius)
        for f, j in zip(fa, analysis.jaccard_series(fa, fb, keep)):
            metrics.add("jaccard", j, na, nb, f.tick)
        metrics.add("uniqueness", analysis.uniqueness(fa, fb, w, h, center, radius), na, nb)
        emissions_b = analysis.segment_emissions(fb)
        if emissions_a and emissions_b:
            rep = analysis.reproducibility(emissions_a[0], emissions_b[0])
            metrics.add("reproducibility_identical", rep.identical, na, nb)
    metrics.write(out)
    return EXIT_OK


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _nonnegative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS)
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="cortexwave", parents=[common],
                                     description="Trap statistics and pattern-wave lattice simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trap-stats", parents=[common], help="Monte Carlo and closed-form trap tables")
    p.add_argument("--k-max", type=_nonnegative_int)
    p.add_argument("--trials", type=_positive_int)
    p.add_argument("--analytic", action="store_true", help="skip the Monte Carlo scan")

    p = sub.add_parser("simulate", parents=[common], help="run one cortex zone")
    p.add_argument("--ticks", type=_positive_int)
    p.add_argument("--train", action="store_true")
    p.add_argument("--dump-frames", action="store_true")

    p = sub.add_parser("tunnel", parents=[common], help="two zones joined by a wavefront tunnel")
    p.add_argument("--config-b", metavar="PATH", required=True)
    p.add_argument("--ticks", type=_positive_int)
    p.add_argument("--train", action="store_true")
    p.add_argument("--dump-frames", action="store_true")

    p = sub.add_parser("analyze", parents=[common], help="metrics over frame directories")
    p.add_argument("run_a", type=Path)
    p.add_argument("run_b", type=Path, nargs="?")
    p.add_argument("--origin", type=_parse_point, help="x,y of the wave source")
    p.add_argument("--exclude", type=_parse_point, help="cx,cy,r disc left out of the Jaccard")
    p.add_argument("--band", type=float, default=0.5)
    p.add_argument("--sustain", type=_positive_int, default=5)
    return parser


def _load(path, seed) -> RunConfig:
    cfg = load_config(path) if path is not None else RunConfig()
    return cfg.replace(seed=seed) if seed is not None else cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    seed = getattr(args, "seed", None)
    cfg = _load(getattr(args, "config", None), seed)
    out = Path(getattr(args, "out", None) or cfg.out)
    if args.command == "trap-stats":
        if args.k_max is not None and args.k_max > cfg.n_trap:
            raise InvalidRange(f"--k-max {args.k_max} exceeds n_trap {cfg.n_trap}")
        return cmd_trap_stats(cfg, out, args.k_max, args.trials, args.analytic)
    if args.command == "simulate":
        return cmd_simulate(cfg, out, args.ticks, args.train, args.dump_frames)
    if args.command == "tunnel":
        cfg_b = _load(args.config_b, None)
        if seed is not None:
            cfg_b = cfg_b.replace(seed=seed + 1)
        return cmd_tunnel(cfg, cfg_b, out, args.ticks, args.train, args.dump_frames)
    if args.exclude is not None and len(args.exclude) != 3:
        raise ParameterError("--exclude takes cx,cy,r")
    if args.origin is not None and len(args.origin) != 2:
        raise ParameterError("--origin takes x,y")
    return cmd_analyze(args.run_a, args.run_b, out, args.origin, args.exclude, args.band, args.sustain)


def main(argv=None) -> int:
    try:
        return run(argv)
    except _CONFIG_ERRORS as exc:
        print(f"cortexwave: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WaveDamped as exc:
        print(f"cortexwave: wave damped: {exc}", file=sys.stderr)
        return EXIT_DAMPED
    except NotConverged as exc:
        print(f"cortexwave: not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except OSError as exc:
        print(f"cortexwave: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is an internal fault
        print(f"cortexwave: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
