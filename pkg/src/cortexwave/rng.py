"""Counter-based pseudo-random function.

Every random decision in the lattice engine is a pure function of a small
tuple of integers, so results do not depend on evaluation order.  The mixer
is the SplitMix64 finalizer, applied once per key component::

    z = mix(seed * GOLDEN + 1)
    z = mix(z ^ (c_k * GOLDEN + k + 1))   for components c_1, c_2, ...
    u = (z >> 11) * 2**-53

which yields a double in [0, 1).  All arithmetic wraps modulo 2**64.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_INV53 = 1.0 / float(1 << 53)


def mix64(z):
    """SplitMix64 finalizer over a uint64 array (wrapping)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _as_u64(x):
    if isinstance(x, (int, np.integer)):
        return np.uint64(int(x) & 0xFFFFFFFFFFFFFFFF)
    return np.asarray(x).astype(np.uint64)


def hash64(seed, *components):
    """Hash ``(seed, *components)`` to uint64; components broadcast."""
    with np.errstate(over="ignore"):
        z = mix64(_as_u64(seed) * GOLDEN + np.uint64(1))
        for k, c in enumerate(components, start=2):
            z = mix64(z ^ (_as_u64(c) * GOLDEN + np.uint64(k)))
    return z


def uniform(seed, *components):
    """Uniform double in [0, 1) keyed by ``(seed, *components)``."""
    z = hash64(seed, *components)
    return (z >> _S11).astype(np.float64) * _INV53


def set_fingerprint(cell_hashes: np.ndarray, members: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Order-independent fingerprint of each member group (wrapping sum).

    ``members`` is a flat index array split into groups starting at
    ``offsets``; every group must be non-empty.
    """
    return np.add.reduceat(cell_hashes[members], offsets).astype(np.uint64)
