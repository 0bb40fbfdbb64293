"""Seedable, splittable 64-bit random streams (SplitMix64).

Every random choice in the trainer flows from one of these streams so that
single-threaded runs are bit-reproducible.  The same step function is
implemented twice: once in pure Python (`SplitMix64`, used by the
Python-facing sampler API and by tests) and once as a numba kernel
(`rng_next`, `rng_below`, used inside the compiled training loop).  The two
must stay in lockstep; `tests/test_rng.py` asserts sequence equality.

Stream derivation: `derive_stream(seed, *words)` hashes the base seed with
an arbitrary tuple of integer salts (thread id, epoch index, ...) through
the SplitMix64 finalizer, giving independent streams per (seed, salts).
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint64

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15  # golden-ratio increment
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """SplitMix64 finalizer: avalanche a 64-bit value."""
    x &= _MASK
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK
    return x ^ (x >> 31)


def derive_stream(seed: int, *words: int) -> int:
    """Derive an independent stream state from a base seed and salt words."""
    state = mix64(seed)
    for w in words:
        state = mix64((state + _GAMMA + (w & _MASK)) & _MASK)
    return state


class SplitMix64:
    """Pure-Python SplitMix64 stream, bit-compatible with the numba kernels."""

    def __init__(self, seed: int, *words: int):
        self.state = derive_stream(seed, *words)

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        return mix64(self.state)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n).  Modulo bias is < n / 2**64."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        return self.next_u64() % n

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


@njit(uint64(uint64[:]), nogil=True, cache=True)
def rng_next(state):
    """Advance the stream in-place and return the next 64-bit draw."""
    state[0] = state[0] + uint64(_GAMMA)
    z = state[0]
    z = (z ^ (z >> uint64(30))) * uint64(_MIX1)
    z = (z ^ (z >> uint64(27))) * uint64(_MIX2)
    return z ^ (z >> uint64(31))


@njit(nogil=True, cache=True)
def rng_below(state, n):
    """Uniform integer in [0, n) from a kernel-side stream."""
    return int(rng_next(state) % uint64(n))


def stream_state(seed: int, *words: int) -> np.ndarray:
    """State array for the kernel-side stream equivalent to SplitMix64(seed, *words)."""
    return np.array([derive_stream(seed, *words)], dtype=np.uint64)
