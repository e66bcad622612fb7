"""Ground-truth computations for small instances and closed-form sums.

Two independent posterior routes are provided.  ``exact_posterior`` uses the
closed-form likelihood of each overlap.  ``enumerate_posterior`` knows nothing
about overlaps: it walks over every start-index pair and every assignment of
the underlying letters and conditions on the observed reads.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument, Unsupported
from .reading_channel import Channel
from .sampler import offset_window, overlap_from_indices, overlap_prior
from .source_models import Markov, Memoryless, Pmf, SourceModel, sample_sequence

TIE_EPS = 1e-9


def _logsumexp(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return -math.inf
    m = finite.max()
    return float(m + math.log(np.exp(finite - m).sum()))


def tie_rule_argmax(log_post: dict[int, float], eps: float = TIE_EPS) -> int:
    """Posterior argmax preferring 0, then smaller ``|t|``, then the positive sign.

    A non-zero overlap is eligible only when it beats the no-overlap posterior
    by more than ``eps`` in the log domain; eligible overlaps within ``eps`` of
    the best are treated as tied.
    """
    base = log_post[0]
    eligible = {t: v for t, v in log_post.items() if t != 0 and v > base + eps}
    if not eligible:
        return 0
    top = max(eligible.values())
    tied = [t for t, v in eligible.items() if v >= top - eps]
    tied.sort(key=lambda t: (abs(t), t < 0))
    return tied[0]


@dataclass(frozen=True)
class PosteriorTable:
    """Posterior over the signed overlap, keyed by ``t``."""

    probs: dict[int, float]
    log_unnormalized: dict[int, float]

    @property
    def argmax(self) -> int:
        return tie_rule_argmax(self.log_unnormalized)

    def to_dict(self) -> dict:
        return {"probs": {str(t): p for t, p in self.probs.items()}, "argmax": self.argmax}


def _table(log_w: dict[int, float]) -> PosteriorTable:
    ts = sorted(log_w)
    arr = np.array([log_w[t] for t in ts])
    total = _logsumexp(arr)
    if not np.isfinite(total):
        raise InvalidArgument("reads have zero probability under every overlap")
    probs = {t: float(math.exp(log_w[t] - total)) if np.isfinite(log_w[t]) else 0.0 for t in ts}
    return PosteriorTable(probs, dict(log_w))


def _reads(reads) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(reads, "read1"):
        return np.asarray(reads.read1), np.asarray(reads.read2)
    r1, r2 = reads
    return np.asarray(r1, dtype=np.int64), np.asarray(r2, dtype=np.int64)


def _memoryless_pmf(model) -> np.ndarray:
    if isinstance(model, Pmf):
        return model.probs
    if isinstance(model, Memoryless):
        return model.pmf.probs
    raise Unsupported("only memoryless sources are supported")


def exact_posterior(reads, model: SourceModel, channel: Channel, n: int, ell: int) -> PosteriorTable:
    """Posterior of the signed overlap from closed-form likelihoods.

    Noise-free reads use the agreement indicator times the inverse probability
    of the shared block.  Otherwise the likelihood is the product of the joint
    output law over shared letters and the output marginal elsewhere.  Both are
    expressed relative to the disjoint-reads likelihood.
    """
    p_x = _memoryless_pmf(model)
    prior = overlap_prior(n, ell)
    r1, r2 = _reads(reads)
    if r1.size != ell or r2.size != ell:
        raise InvalidArgument("reads must have length ell")
    with np.errstate(divide="ignore"):
        log_prior = {t: math.log(prior.prob(t)) for t in prior.support}
        if channel.is_identity:
            log_p = np.log(p_x)

            def rel(a, b, t):
                if not np.array_equal(a[ell - t :], b[:t]):
                    return -math.inf
                return -float(sum(log_p[v] for v in b[:t]))

        else:
            rows = channel.rows
            p_y = p_x @ rows
            joint = np.einsum("x,xa,xb->ab", p_x, rows, rows)
            log_joint = np.log(joint)
            log_py = np.log(p_y)

            def rel(a, b, t):
                shared = sum(log_joint[u, v] for u, v in zip(a[ell - t :], b[:t]))
                apart = sum(log_py[u] for u in a[ell - t :]) + sum(log_py[v] for v in b[:t])
                return float(shared - apart)

    log_w = {0: log_prior[0]}
    for t in prior.support:
        if t > 0:
            log_w[t] = log_prior[t] + rel(r1, r2, t)
        elif t < 0:
            log_w[t] = log_prior[t] + rel(r2, r1, -t)
    return _table(log_w)


def _assignments(k: int, length: int) -> np.ndarray:
    return np.array(list(itertools.product(range(k), repeat=length)), dtype=np.int64).reshape(-1, length)


@functools.lru_cache(maxsize=64)
def _offset_tables(probs: tuple[float, ...], n: int, ell: int):
    """Joint law of the letters under two reads, for every start-index pair.

    Returns ``(overlaps, weights, joint)``: for each distinct offset
    ``i2 - i1`` its overlap, the prior mass of all index pairs with that
    offset, and a ``(k**ell, k**ell)`` table of joint letter probabilities
    obtained by summing over every letter string on the union of read positions.
    """
    p_x = np.array(probs)
    k = p_x.size
    counts: dict[int, int] = {}
    for i1 in range(1, n + 1):
        lo, hi = offset_window(i1, n, ell)
        for d in range(lo, hi + 1):
            counts[d] = counts.get(d, 0) + 1
    offsets = sorted(counts)
    radix = k ** np.arange(ell - 1, -1, -1)
    joint = np.zeros((len(offsets), k**ell, k**ell))
    for row, d in enumerate(offsets):
        positions = sorted(set(range(ell)) | set(range(d, d + ell)))
        column = {pos: c for c, pos in enumerate(positions)}
        strings = _assignments(k, len(positions))
        weight = np.prod(p_x[strings], axis=1)
        idx1 = strings[:, [column[j] for j in range(ell)]] @ radix
        idx2 = strings[:, [column[d + j] for j in range(ell)]] @ radix
        np.add.at(joint[row], (idx1, idx2), weight)
    overlaps = np.array([overlap_from_indices(0, d, ell) for d in offsets])
    weights = np.array([counts[d] for d in offsets], dtype=np.float64) / (n * n)
    return overlaps, weights, joint


def _channel_likelihood(rows: np.ndarray, read: np.ndarray) -> np.ndarray:
    """``P(read | letters)`` for every letter assignment, in lexicographic order."""
    letters = _assignments(rows.shape[0], read.size)
    return np.prod(rows[letters, read[None, :]], axis=1)


def enumerate_posterior(
    reads, model: SourceModel, channel: Channel, n: int, ell: int, full_sequence: bool = False
) -> PosteriorTable:
    """Brute-force posterior over every ``(i1, i2)`` pair and letter assignment.

    By default only letters under the reads are enumerated (the rest sum to
    one); ``full_sequence`` enumerates the whole extended sequence instead and
    is feasible only for tiny ``n``.
    """
    p_x = _memoryless_pmf(model)
    prior = overlap_prior(n, ell)
    r1, r2 = _reads(reads)
    if r1.size != ell or r2.size != ell:
        raise InvalidArgument("reads must have length ell")
    mass = {t: 0.0 for t in prior.support}
    if full_sequence:
        k = p_x.size
        sequences = _assignments(k, n + 3 * ell - 3)
        seq_weight = np.prod(p_x[sequences], axis=1)
        for i1 in range(1, n + 1):
            lo, hi = offset_window(i1, n, ell)
            for i2 in range(i1 + lo, i1 + hi + 1):
                like = seq_weight.copy()
                for start, read in ((i1, r1), (i2, r2)):
                    off = start + ell - 2
                    for j, y in enumerate(read):
                        like = like * channel.rows[sequences[:, off + j], y]
                mass[overlap_from_indices(i1, i2, ell)] += float(like.sum()) / (n * n)
    else:
        overlaps, weights, joint = _offset_tables(tuple(float(v) for v in p_x), n, ell)
        like1 = _channel_likelihood(channel.rows, r1)
        like2 = _channel_likelihood(channel.rows, r2)
        per_offset = np.einsum("i,dij,j->d", like1, joint, like2)
        for t, w, v in zip(overlaps, weights, per_offset):
            mass[int(t)] += w * v
    with np.errstate(divide="ignore"):
        log_w = {t: math.log(v) if v > 0 else -math.inf for t, v in mass.items()}
    return _table(log_w)


# -- closed-form sums ---------------------------------------------------------


def _compositions(t: int, k: int):
    if k == 1:
        yield (t,)
        return
    for first in range(t + 1):
        for rest in _compositions(t - first, k - 1):
            yield (first,) + rest


def partial_power_sum(pmf, t: int, threshold: float, exponent: int, direction: str) -> float:
    """Sum of ``P(x)^exponent`` over length-``t`` blocks with ``1/P`` on one side of ``threshold``.

    ``direction='ge'`` keeps blocks with ``1/P >= threshold`` and ``'le'``
    keeps ``1/P <= threshold``.  Blocks are grouped by composition, so the
    cost grows polynomially in ``t``.
    """
    if isinstance(pmf, SourceModel) and not isinstance(pmf, Memoryless):
        raise Unsupported("partial power sums need a memoryless source")
    p = _memoryless_pmf(pmf if isinstance(pmf, (Pmf, SourceModel)) else Pmf(pmf))
    if exponent not in (1, 2):
        raise InvalidArgument("exponent must be 1 or 2")
    if direction not in ("ge", "le"):
        raise InvalidArgument("direction must be 'ge' or 'le'")
    if t < 1 or threshold < 0:
        raise InvalidArgument("t must be positive and threshold non-negative")
    support = p[p > 0]
    logs = np.log(support)
    log_thr = math.log(threshold) if threshold > 0 else -math.inf
    tol = 1e-12 * max(1.0, abs(log_thr)) if math.isfinite(log_thr) else 0.0
    lgt = math.lgamma(t + 1)
    terms = []
    for comp in _compositions(t, support.size):
        surprisal = -float(np.dot(comp, logs))
        keep = surprisal >= log_thr - tol if direction == "ge" else surprisal <= log_thr + tol
        if keep:
            log_count = lgt - sum(math.lgamma(c + 1) for c in comp)
            terms.append(log_count - exponent * surprisal)
    if not terms:
        return 0.0
    arr = np.array(terms)
    m = arr.max()
    return math.exp(m) * math.fsum(np.exp(arr - m))


class RepetitionEstimate(NamedTuple):
    value: float
    stderr: float
    method: str


def repetition_probability(
    model: SourceModel, t: int, s: int, trials: int = 100_000, seed: int = 0
) -> RepetitionEstimate:
    """``P[X_1^t = X_{1+s}^{t+s}]``: exact for memoryless sources, sampled for Markov ones."""
    if t < 1 or s < 1:
        raise InvalidArgument("t and s must be positive")
    if isinstance(model, Memoryless):
        p = model.pmf.probs
        counts = np.bincount(np.arange(1, t + s + 1) % s, minlength=s)
        value = math.prod(float((p ** int(c)).sum()) for c in counts)
        return RepetitionEstimate(value, 0.0, "exact")
    from .montecarlo.rng import stream_generator

    hits = 0
    rng = stream_generator(seed, 0x5E9, t, s)
    for _ in range(trials):
        seq = sample_sequence(model, t + s, rng)
        hits += bool(np.array_equal(seq[:t], seq[s:]))
    phat = hits / trials
    return RepetitionEstimate(phat, math.sqrt(phat * (1 - phat) / trials), "monte_carlo")


def markov_repetition_exact(model: SourceModel, t: int, s: int) -> float:
    """Exact repetition probability by enumerating the first ``s`` letters.

    The event forces ``x_{j+s} = x_j`` for ``j <= t``, so the first ``s``
    letters determine the whole string of length ``t + s``.
    """
    if s > 12:
        raise InvalidArgument("exact enumeration is limited to s <= 12")
    if t < 1 or s < 1:
        raise InvalidArgument("t and s must be positive")
    k = model.alphabet_size
    trans = model.transition_matrix()
    blocks = np.array(list(itertools.product(range(k), repeat=s)), dtype=np.int64)
    weight = model.initial_pmf()[blocks[:, 0]].copy()
    for j in range(1, s):
        weight *= trans[blocks[:, j - 1], blocks[:, j]]
    prev = blocks[:, s - 1]
    for j in range(t):
        cur = blocks[:, j % s]
        weight *= trans[prev, cur]
        prev = cur
    return float(weight.sum())
