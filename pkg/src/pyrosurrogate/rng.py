"""SplitMix64 generator used for every seeded draw in the package.

The generator is frozen (``RNG_ID``) and recorded in the model header so a
stored forest names the stream that grew it. The numba kernels keep their
state in a length-1 ``uint64`` array; the pure-Python helpers below are used
for seed derivation and mirror the kernel bit for bit.
"""

from __future__ import annotations

import numba
import numpy as np

RNG_ID = 1  # SplitMix64

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def splitmix64_stream(seed: int, n: int) -> list[int]:
    """First ``n`` outputs of SplitMix64 seeded with ``seed``."""
    state = seed & _MASK
    out = []
    for _ in range(n):
        state = (state + _GOLDEN) & _MASK
        out.append(_mix(state))
    return out


def derive_seed(seed: int, *indices: int) -> int:
    """Derive a child seed from ``seed`` and a path of non-negative indices.

    Each index is folded in as ``s <- mix(s + (i + 1) * golden)``, so
    ``derive_seed(s, t)`` differs for every tree index ``t`` and
    ``derive_seed(s, a, b)`` differs from ``derive_seed(s, b, a)``.
    """
    s = seed & _MASK
    for i in indices:
        if i < 0:
            raise ValueError("seed path indices must be non-negative")
        s = _mix((s + (i + 1) * _GOLDEN) & _MASK)
    return s


def new_state(seed: int) -> np.ndarray:
    return np.array([seed & _MASK], dtype=np.uint64)


@numba.njit(cache=True, nogil=True)
def next_u64(state):
    s = state[0] + np.uint64(0x9E3779B97F4A7C15)
    state[0] = s
    z = s
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def uniform_index(state, n):
    """Unbiased integer in ``[0, n)`` by rejection of the low remainder band."""
    un = np.uint64(n)
    threshold = (np.uint64(0) - un) % un
    while True:
        x = next_u64(state)
        if x >= threshold:
            return np.int64(x % un)


@numba.njit(cache=True, nogil=True)
def uniform_unit(state):
    """Double in ``[0, 1)`` from the top 53 bits."""
    return np.float64(next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True, nogil=True)
def uniform_units(state, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = uniform_unit(state)
    return out
