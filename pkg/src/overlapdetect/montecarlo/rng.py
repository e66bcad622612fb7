"""Counter-based random streams.

Every unit of simulation work owns a stream keyed by integers such as
``(master seed, n, t, block)``.  The key is hashed with the splitmix64
finalizer; the stream then walks the Weyl sequence ``key + i * gamma`` and
finalizes each state.  Results therefore depend only on the keys and never on
which worker ran which unit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GAMMA_INT = 0x9E3779B97F4A7C15
GAMMA = np.uint64(GAMMA_INT)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
TWO_NEG53 = 2.0 ** -53


def _mix_int(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _zigzag(v: int) -> int:
    return (v << 1) if v >= 0 else ((-v << 1) - 1)


def stream_key(seed: int, *parts: int) -> int:
    """Hash a master seed and signed integer coordinates into a 64-bit key."""
    key = _mix_int(_zigzag(int(seed)) ^ GAMMA_INT)
    for part in parts:
        key = _mix_int(key ^ _zigzag(int(part)) ^ GAMMA_INT)
    return key


def stream_generator(seed: int, *parts: int) -> np.random.Generator:
    """A numpy generator deterministically derived from the same coordinates."""
    key = stream_key(seed, *parts)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([key & 0xFFFFFFFF, key >> 32])))


@njit(inline="always")
def mix64(z):
    z = (z ^ (z >> S30)) * MIX1
    z = (z ^ (z >> S27)) * MIX2
    return z ^ (z >> S31)


@njit(inline="always")
def next_u64(state):
    state[0] += GAMMA
    return mix64(state[0])


@njit(inline="always")
def next_unit(state):
    """Uniform double on ``[0, 1)`` with 53 random bits."""
    return np.float64(next_u64(state) >> S11) * TWO_NEG53


@njit(inline="always")
def next_below(state, m):
    """Unbiased uniform integer on ``[0, m)`` by rejection."""
    um = np.uint64(m)
    floor = (np.uint64(0) - um) % um
    while True:
        x = next_u64(state)
        if x >= floor:
            return np.int64(x % um)


@njit(inline="always")
def bernoulli_word(state, level, low):
    """64 independent bits, each set with probability ``level / 2**32``.

    Consumes the binary expansion of ``level`` from bit ``low`` (its lowest set
    bit) upward, AND-ing or OR-ing fresh random words.
    """
    acc = np.uint64(0)
    for i in range(low, 32):
        r = next_u64(state)
        if (level >> np.uint64(i)) & np.uint64(1):
            acc |= r
        else:
            acc &= r
    return acc
