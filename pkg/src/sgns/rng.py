"""Deterministic random number streams for training.

Every stochastic decision in the pipeline (subsampling, dynamic window
shrink, negative draws) pulls from a splitmix64 stream held in a one-element
uint64 array, so the exact same draw sequence is reproducible from Python
code and from compiled kernels alike.  Each training thread owns an
independent stream derived from (seed, stream_id).
"""

import numpy as np
from numba import njit, uint64

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF


@njit(cache=True, nogil=True, inline="always")
def next_u64(state):
    """Advance the stream and return the next 64-bit output."""
    state[0] += uint64(_GOLDEN)
    z = state[0]
    z = (z ^ (z >> uint64(30))) * uint64(_MIX1)
    z = (z ^ (z >> uint64(27))) * uint64(_MIX2)
    return z ^ (z >> uint64(31))


@njit(cache=True, nogil=True, inline="always")
def next_uniform(state):
    """Next float64 uniform in [0, 1)."""
    return float(next_u64(state) >> uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True, inline="always")
def next_below(state, n):
    """Next integer uniform in [0, n).  Modulo bias is negligible for n << 2^64."""
    return int(next_u64(state) % uint64(n))


def _mix(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def new_state(seed: int, stream: int = 0) -> np.ndarray:
    """Create an independent stream for (seed, stream).

    The returned one-element uint64 array is the mutable state consumed by
    the njit draw functions.  Distinct (seed, stream) pairs are scrambled
    apart so per-thread streams do not overlap in practice.
    """
    z = _mix((seed & _MASK) ^ ((stream * _GOLDEN + 1) & _MASK))
    return np.array([z], dtype=np.uint64)
