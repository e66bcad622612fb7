"""MAP overlap detectors for noiseless and noisy read pairs.

Scores are natural-log likelihood ratios against the no-overlap hypothesis
before prior weighting: ``log_gamma_plus[t]`` for a positive overlap ``t`` and
``log_gamma_minus[t]`` for the negative overlap ``-t``.  An overlap is chosen
only if its score exceeds the threshold by more than ``COMPARE_EPS``; among
such overlaps the largest score wins, and scores within ``COMPARE_EPS`` of the
best are resolved toward smaller ``|t|`` and then the positive sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import InvalidArgument
from .reading_channel import PairStats
from .sampler import ReadPair, overlap_prior
from .source_models import MarkovKernel, SourceModel, block_surprisal_bounds

COMPARE_EPS = 1e-9

Reads = Union[ReadPair, Sequence]


@dataclass(frozen=True)
class DetectorConfig:
    """Threshold exponent, optional truncation cutoff, and one-sided restriction.

    ``mu`` unset uses the prior-odds threshold ``n_ell``; otherwise ``n**mu``.
    With ``truncation_cutoff`` set, decisions with ``|t| < cutoff`` become 0.
    ``one_sided`` drops the negative-overlap hypotheses.
    """

    mu: float | None = None
    truncation_cutoff: int | None = None
    one_sided: bool = False

    def __post_init__(self):
        if self.mu is not None and not self.mu > 0:
            raise InvalidArgument("mu must be positive")
        if self.truncation_cutoff is not None and self.truncation_cutoff < 0:
            raise InvalidArgument("truncation cutoff must be non-negative")

    def log_threshold(self, n: int, ell: int) -> float:
        if self.mu is None:
            return math.log(overlap_prior(n, ell).n_ell)
        return self.mu * math.log(n)

    def to_dict(self) -> dict:
        return {"mu": self.mu, "truncation_cutoff": self.truncation_cutoff, "one_sided": self.one_sided}


@dataclass(frozen=True, eq=False)
class Decision:
    t_hat: int
    log_gamma_plus: np.ndarray
    log_gamma_minus: np.ndarray
    log_threshold: float

    @property
    def excluded_plus(self) -> np.ndarray:
        return np.isneginf(self.log_gamma_plus)

    @property
    def excluded_minus(self) -> np.ndarray:
        return np.isneginf(self.log_gamma_minus)

    def score(self, t: int) -> float:
        if t == 0:
            return self.log_threshold
        return float(self.log_gamma_plus[t] if t > 0 else self.log_gamma_minus[-t])

    def to_dict(self, scores: bool = False) -> dict:
        doc: dict = {"t_hat": int(self.t_hat)}
        if scores:
            fmt = lambda arr: [None if np.isneginf(v) else float(v) for v in arr[1:]]  # noqa: E731
            doc["log_gamma_plus"] = fmt(self.log_gamma_plus)
            doc["log_gamma_minus"] = fmt(self.log_gamma_minus)
            doc["log_threshold"] = self.log_threshold
        return doc


def map_decide(
    log_gamma_plus: np.ndarray,
    log_gamma_minus: np.ndarray,
    log_threshold: float,
    config: DetectorConfig = DetectorConfig(),
    eps: float = COMPARE_EPS,
) -> int:
    """Apply the threshold comparison and tie rule to a score vector."""
    floor = log_threshold + eps
    cands = [(float(s), t) for t, s in enumerate(log_gamma_plus) if t > 0 and s > floor]
    if not config.one_sided:
        cands += [(float(s), -t) for t, s in enumerate(log_gamma_minus) if t > 0 and s > floor]
    if not cands:
        return 0
    best = max(s for s, _ in cands)
    t_hat = min((t for s, t in cands if s >= best - eps), key=lambda t: (abs(t), t < 0))
    cutoff = config.truncation_cutoff
    if cutoff is not None and abs(t_hat) < cutoff:
        return 0
    return t_hat


def _split(pair: Reads) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pair, ReadPair):
        r1, r2 = pair.read1, pair.read2
    else:
        r1, r2 = pair
    r1 = np.asarray(r1, dtype=np.int64)
    r2 = np.asarray(r2, dtype=np.int64)
    if r1.ndim != 1 or r1.shape != r2.shape or r1.size < 2:
        raise InvalidArgument("reads must be equal-length sequences of length at least 2")
    return r1, r2


def block_log_probs(model: SourceModel, seq: np.ndarray) -> np.ndarray:
    """``out[t] = ln P(seq[:t])`` under the stationary law, ``out[0] = 0``."""
    k = model.alphabet_size
    if seq.min() < 0 or seq.max() >= k:
        raise InvalidArgument(f"symbols must lie in [0, {k})")
    steps = np.empty(seq.size)
    steps[0] = model.log_initial()[seq[0]]
    steps[1:] = model.log_transition()[seq[:-1], seq[1:]]
    return np.concatenate(([0.0], np.cumsum(steps)))


def noiseless_scores(r1: np.ndarray, r2: np.ndarray, model: SourceModel) -> tuple[np.ndarray, np.ndarray]:
    ell = r1.size
    prefix2 = block_log_probs(model, r2)
    prefix1 = block_log_probs(model, r1)
    plus = np.full(ell + 1, -np.inf)
    minus = np.full(ell, -np.inf)
    plus[0] = minus[0] = 0.0
    for t in range(1, ell + 1):
        if np.array_equal(r1[ell - t :], r2[:t]):
            plus[t] = -prefix2[t]
        if t < ell and np.array_equal(r2[ell - t :], r1[:t]):
            minus[t] = -prefix1[t]
    return plus, minus


def detect_noiseless(pair: Reads, model: SourceModel, n: int, config: DetectorConfig = DetectorConfig()) -> Decision:
    """MAP overlap decision for error-free reads."""
    r1, r2 = _split(pair)
    log_thr = config.log_threshold(n, r1.size)
    plus, minus = noiseless_scores(r1, r2, model)
    return Decision(map_decide(plus, minus, log_thr, config), plus, minus, log_thr)


def noisy_scores(r1: np.ndarray, r2: np.ndarray, stats: PairStats) -> tuple[np.ndarray, np.ndarray]:
    ell = r1.size
    k = stats.output_size
    if min(r1.min(), r2.min()) < 0 or max(r1.max(), r2.max()) >= k:
        raise InvalidArgument(f"observed symbols must lie in [0, {k})")
    table = np.where(stats.excluded, -np.inf, np.nan_to_num(stats.log_lambda))
    plus = np.full(ell + 1, -np.inf)
    minus = np.full(ell, -np.inf)
    plus[0] = minus[0] = 0.0
    for t in range(1, ell + 1):
        plus[t] = table[r1[ell - t :], r2[:t]].sum()
        if t < ell:
            minus[t] = table[r2[ell - t :], r1[:t]].sum()
    return plus, minus


def detect_noisy(pair: Reads, stats: PairStats, n: int, config: DetectorConfig = DetectorConfig()) -> Decision:
    """MAP overlap decision for reads observed through a memoryless channel."""
    r1, r2 = _split(pair)
    log_thr = config.log_threshold(n, r1.size)
    plus, minus = noisy_scores(r1, r2, stats)
    return Decision(map_decide(plus, minus, log_thr, config), plus, minus, log_thr)


def min_detectable_overlap(
    setting: SourceModel | PairStats | float, n: int, ell: int, mu: float | None = None
) -> float:
    """Largest overlap that can never cross the detection threshold.

    A source model gives the noiseless value, an integer from a direct scan of
    the largest block surprisal.  Pair statistics (or ``lambda_max`` itself)
    give the noisy value ``ln threshold / ln lambda_max``, real-valued and
    ``inf`` when ``lambda_max == 1``.
    """
    log_thr = DetectorConfig(mu=mu).log_threshold(n, ell)
    if isinstance(setting, SourceModel):
        bounds = block_surprisal_bounds(setting, ell)
        ok = [t for t in range(1, ell + 1) if bounds[t] <= log_thr + COMPARE_EPS]
        return max(ok, default=0)
    lam_max = setting.lambda_max if isinstance(setting, PairStats) else float(setting)
    if lam_max < 1:
        raise InvalidArgument("lambda_max is at least 1")
    if lam_max == 1:
        return math.inf
    return log_thr / math.log(lam_max)


def markov_exact_score(pair: Reads, markov: MarkovKernel | SourceModel, t: int) -> float:
    """Exact natural-log likelihood of overlap ``t`` divided by ``P(read1)``.

    For ``t < 0`` the roles of the reads swap and the normalizer is ``P(read2)``.
    ``-inf`` when the overlapping symbols disagree.
    """
    r1, r2 = _split(pair)
    ell = r1.size
    if t == 0 or not -(ell - 1) <= t <= ell:
        raise InvalidArgument("t must be a non-zero overlap in the prior support")
    if t < 0:
        r1, r2, t = r2, r1, -t
    rows = markov.rows if isinstance(markov, MarkovKernel) else markov.transition_matrix()
    if not np.array_equal(r1[ell - t :], r2[:t]):
        return -math.inf
    with np.errstate(divide="ignore"):
        log_rows = np.log(rows)
    return float(log_rows[r2[t - 1 : ell - 1], r2[t:]].sum())
