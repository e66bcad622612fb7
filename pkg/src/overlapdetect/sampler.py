"""Read-pair generative model: start indices, signed overlap and its prior.

Sequence positions follow 1-based numbering and may be non-positive: the
underlying sequence is extended to positions ``2-ell .. n+2ell-2`` so that
every admissible read fits.  Position ``j`` lives at buffer offset
``j + ell - 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidArgument
from .reading_channel import Channel, apply_channel
from .source_models import SourceModel, sample_sequence


@dataclass(frozen=True)
class OverlapPrior:
    """Prior of the signed overlap for sequence length ``n`` and read length ``ell``."""

    n: int
    ell: int

    @property
    def n_ell(self) -> int:
        return self.n - (2 * self.ell - 1)

    @property
    def support(self) -> list[int]:
        return list(range(-(self.ell - 1), self.ell + 1))

    def prob(self, t: int) -> Fraction:
        if t == 0:
            return Fraction(self.n_ell, self.n)
        if -(self.ell - 1) <= t <= self.ell:
            return Fraction(1, self.n)
        return Fraction(0)

    def pmf(self) -> dict[int, Fraction]:
        return {t: self.prob(t) for t in self.support}


def overlap_prior(n: int, ell: int) -> OverlapPrior:
    if ell < 2:
        raise InvalidArgument("read length must be at least 2")
    if n < 2 * ell:
        raise InvalidArgument("sequence length must be at least twice the read length")
    return OverlapPrior(int(n), int(ell))


def overlap_from_indices(i1: int, i2: int, ell: int) -> int:
    """Signed overlap; a full overlap counts as positive."""
    if i2 >= i1:
        return max(0, ell - (i2 - i1))
    return -max(0, ell - (i1 - i2))


def offset_window(i1: int, n: int, ell: int) -> tuple[int, int]:
    """Inclusive range of ``i2 - i1`` given ``i1``."""
    if i1 <= ell - 1:
        return -ell + 1, n - ell
    if i1 <= n - ell + 1:
        return 1 - i1, n - i1
    return ell - n, ell - 1


def offset_for_overlap(t: int, ell: int) -> int:
    """The unique ``i2 - i1`` producing a non-zero overlap ``t``."""
    return ell - t if t > 0 else -ell - t


def disjoint_offset(i1: int, n: int, ell: int, k: int) -> int:
    """The ``k``-th (0-based) offset in the window of ``i1`` yielding disjoint reads."""
    lo, _ = offset_window(i1, n, ell)
    below = max(0, -ell - lo + 1)
    return lo + k if k < below else ell + (k - below)


@dataclass(frozen=True, eq=False)
class ReadPair:
    read1: np.ndarray
    read2: np.ndarray
    i1: int
    i2: int
    t: int

    def to_dict(self) -> dict:
        return {
            "read1": [int(v) for v in self.read1],
            "read2": [int(v) for v in self.read2],
            "i1": int(self.i1),
            "i2": int(self.i2),
            "t": int(self.t),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReadPair":
        return cls(
            np.asarray(doc["read1"], dtype=np.int64),
            np.asarray(doc["read2"], dtype=np.int64),
            int(doc["i1"]),
            int(doc["i2"]),
            int(doc["t"]),
        )


def _extract(model, channel, n, ell, i1, i2, rng) -> ReadPair:
    buffer = sample_sequence(model, n + 3 * ell - 3, rng)
    reads = []
    for start in (i1, i2):
        if not (2 - ell <= start and start + ell - 1 <= n + 2 * ell - 2):
            raise AssertionError("read leaves the extended sequence")
        off = start + ell - 2
        reads.append(apply_channel(channel, buffer[off : off + ell], rng))
    return ReadPair(reads[0], reads[1], i1, i2, overlap_from_indices(i1, i2, ell))


def sample_pair(
    model: SourceModel, channel: Channel, n: int, ell: int, rng: np.random.Generator
) -> ReadPair:
    """Draw one read pair from the full generative model."""
    overlap_prior(n, ell)
    i1 = int(rng.integers(1, n + 1))
    lo, hi = offset_window(i1, n, ell)
    i2 = i1 + int(rng.integers(lo, hi + 1))
    return _extract(model, channel, n, ell, i1, i2, rng)


def sample_pair_given_t(
    model: SourceModel, channel: Channel, n: int, ell: int, t: int, rng: np.random.Generator
) -> ReadPair:
    """Draw a read pair conditioned on its signed overlap being ``t``."""
    prior = overlap_prior(n, ell)
    if t not in range(-(ell - 1), ell + 1):
        raise InvalidArgument(f"overlap {t} outside the prior support")
    i1 = int(rng.integers(1, n + 1))
    if t == 0:
        i2 = i1 + disjoint_offset(i1, n, ell, int(rng.integers(0, prior.n_ell)))
    else:
        i2 = i1 + offset_for_overlap(t, ell)
    return _extract(model, channel, n, ell, i1, i2, rng)
