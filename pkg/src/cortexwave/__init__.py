"""Trap statistics and a pattern-wave lattice cortex simulator."""

from .cortex import Frame, GridGeometry, NeuronMode, SimParams
from .trapstats import TrapParams
from .wavesim import CortexState, Tunnel, attach_tunnel, next_emission, run_coupled, train

__all__ = [
    "CortexState", "Frame", "GridGeometry", "NeuronMode", "SimParams", "TrapParams", "Tunnel",
    "attach_tunnel", "next_emission", "run_coupled", "train",
]
__version__ = "0.1.0"
