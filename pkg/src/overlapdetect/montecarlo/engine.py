"""Stratified Monte Carlo estimation of overlap-detection error rates.

Each overlap value ``t`` is a stratum simulated conditionally on ``T = t``;
the strata are recombined with the exact overlap prior.  Trials are grouped
into fixed-size blocks, each driven by its own counter-based stream keyed by
``(seed, n, t, block)``, so reports do not depend on the number of workers.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist
from typing import Iterable

import numpy as np

from ..detectors import COMPARE_EPS, DetectorConfig, min_detectable_overlap
from ..errors import InvalidArgument
from ..reading_channel import (
    Channel,
    PairStats,
    channel_from_dict,
    channel_to_dict,
    identity_channel,
    pair_statistics,
    type1_tail_bound,
)
from ..sampler import overlap_prior
from ..source_models import (
    Markov,
    Memoryless,
    SourceModel,
    entropy_rate,
    model_from_dict,
    model_to_dict,
)
from . import kernels
from .rng import stream_key

log = logging.getLogger(__name__)

BLOCK_TRIALS = 1 << 16
MIN_TRIALS = 100
Z95 = NormalDist().inv_cdf(0.975)
LEVEL_BITS = 32


def wilson_interval(errors: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise InvalidArgument("trials must be positive")
    p = errors / trials
    z2 = z * z
    denom = 1 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    lo = 0.0 if errors == 0 else max(0.0, center - half)
    hi = 1.0 if errors == trials else min(1.0, center + half)
    return lo, hi


def read_length(beta: float, n: int, k: int) -> int:
    """``ceil(beta * log_k n)``, robust to rounding when the product is an integer."""
    return int(math.ceil(beta * math.log(n) / math.log(k) - 1e-9))


@dataclass(frozen=True)
class ExperimentConfig:
    model: SourceModel
    beta: float
    n_grid: tuple[int, ...]
    channel: Channel | None = None
    trials_per_stratum: int = 100_000
    type1_trials: int = 1_000_000
    type1_trials_per_n: float | None = None
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    which_detector: str = "auto"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if self.channel is None:
            object.__setattr__(self, "channel", identity_channel(self.model.alphabet_size))
        if self.channel.input_size != self.model.alphabet_size:
            raise InvalidArgument("channel input alphabet differs from the source alphabet")
        if not self.beta > 0:
            raise InvalidArgument("beta must be positive")
        if not self.n_grid:
            raise InvalidArgument("n_grid must not be empty")
        if self.trials_per_stratum < MIN_TRIALS:
            raise InvalidArgument(f"trials_per_stratum must be at least {MIN_TRIALS}")
        if self.type1_trials_per_n is None and self.type1_trials < MIN_TRIALS:
            raise InvalidArgument(f"type1_trials must be at least {MIN_TRIALS}")
        if self.type1_trials_per_n is not None and not self.type1_trials_per_n > 0:
            raise InvalidArgument("type1_trials_per_n must be positive")
        if self.which_detector not in ("auto", "noiseless", "noisy"):
            raise InvalidArgument("which_detector must be 'auto', 'noiseless' or 'noisy'")
        for n in self.n_grid:
            ell = self.ell(n)
            if ell < 2 or n < 2 * ell:
                raise InvalidArgument(f"n = {n} is too small for read length {ell}")

    def ell(self, n: int) -> int:
        return read_length(self.beta, n, self.model.alphabet_size)

    def type1_trial_count(self, n: int) -> int:
        if self.type1_trials_per_n is not None:
            return max(MIN_TRIALS, int(math.ceil(self.type1_trials_per_n * n)))
        return self.type1_trials

    @property
    def noisy(self) -> bool:
        if self.which_detector == "auto":
            return not self.channel.is_identity
        return self.which_detector == "noisy"

    def to_dict(self) -> dict:
        return {
            "model": model_to_dict(self.model),
            "channel": channel_to_dict(self.channel),
            "beta": self.beta,
            "n_grid": list(self.n_grid),
            "trials_per_stratum": self.trials_per_stratum,
            "type1_trials": self.type1_trials,
            "type1_trials_per_n": self.type1_trials_per_n,
            "detector": self.detector.to_dict(),
            "which_detector": self.which_detector,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        allowed = {
            "model", "channel", "beta", "n_grid", "trials_per_stratum", "type1_trials",
            "type1_trials_per_n", "detector", "which_detector", "seed",
        }
        unknown = set(doc) - allowed
        if unknown:
            raise InvalidArgument(f"unknown experiment keys: {sorted(unknown)}")
        for key in ("model", "beta", "n_grid"):
            if key not in doc:
                raise InvalidArgument(f"missing experiment key {key!r}")
        det = doc.get("detector") or {}
        unknown = set(det) - {"mu", "truncation_cutoff", "one_sided"}
        if unknown:
            raise InvalidArgument(f"unknown detector keys: {sorted(unknown)}")
        return cls(
            model=model_from_dict(doc["model"]),
            channel=channel_from_dict(doc["channel"]) if doc.get("channel") is not None else None,
            beta=float(doc["beta"]),
            n_grid=tuple(doc["n_grid"]),
            trials_per_stratum=int(doc.get("trials_per_stratum", 100_000)),
            type1_trials=int(doc.get("type1_trials", 1_000_000)),
            type1_trials_per_n=doc.get("type1_trials_per_n"),
            detector=DetectorConfig(**det),
            which_detector=doc.get("which_detector", "auto"),
            seed=int(doc.get("seed", 0)),
        )


def _level(p: float) -> tuple[int, int]:
    """Quantize a probability to ``level / 2**32``; returns ``(level, lowest set bit)``."""
    level = int(round(p * (1 << LEVEL_BITS)))
    if level <= 0 or level >= 1 << LEVEL_BITS:
        return level, 0
    if level == 1 << (LEVEL_BITS - 1):
        return level, -1
    return level, (level & -level).bit_length() - 1


def _markov_power_cdf(model: SourceModel, horizon: int) -> np.ndarray:
    """CDF rows of ``K^m`` for ``m < M``; from ``M`` on the rows equal ``pi`` to machine precision."""
    k = model.alphabet_size
    if not isinstance(model, Markov):
        return np.zeros((1, k, k))
    trans = model.transition_matrix()
    pi = model.initial_pmf()
    powers = [np.eye(k)]
    current = np.eye(k)
    while len(powers) <= horizon:
        current = current @ trans
        powers.append(current)
        if np.abs(current - pi[None, :]).max() < 1e-16:
            break
    return np.cumsum(np.array(powers), axis=2)


class StratumRunner:
    """Compiled trial loop for one ``(config, n)`` pair."""

    def __init__(self, config: ExperimentConfig, n: int, noisy_detector: bool | None = None):
        self.config = config
        self.n = n
        self.ell = ell = config.ell(n)
        model, channel = config.model, config.channel
        det = config.detector
        self.noisy_detector = config.noisy if noisy_detector is None else noisy_detector
        self.log_threshold = det.log_threshold(n, ell)
        self.floor = self.log_threshold + COMPARE_EPS
        self.cutoff = det.truncation_cutoff or 0
        self.one_sided = det.one_sided
        self.stats: PairStats | None = None
        if self.noisy_detector:
            if not isinstance(model, Memoryless):
                raise InvalidArgument("the noisy detector needs a memoryless source")
            self.stats = pair_statistics(model.pmf, channel)
            self.t_mdo = min_detectable_overlap(self.stats, n, ell, det.mu)
            lam = np.where(self.stats.excluded, -np.inf, np.nan_to_num(self.stats.log_lambda))
            self.lam = np.ascontiguousarray(lam)
            self.lam_max = math.log(self.stats.lambda_max)
        else:
            self.t_mdo = min_detectable_overlap(model, n, ell, det.mu)
            self.lam = np.zeros((channel.output_size, channel.output_size))
            self.lam_max = 0.0
        self.t_min = ell + 1 if math.isinf(self.t_mdo) else int(math.floor(self.t_mdo)) + 1
        self.sample_noisy = not channel.is_identity
        self.packed = (
            isinstance(model, Memoryless)
            and model.alphabet_size == 2
            and channel.output_size == 2
        )
        if self.packed:
            self.one_level, self.one_low = _level(float(model.pmf.probs[1]))
            levels = [_level(float(channel.rows[0, 1])), _level(float(channel.rows[1, 0]))]
            self.flip_level = np.array([lv for lv, _ in levels], dtype=np.int64)
            self.flip_low = np.array([lo for _, lo in levels], dtype=np.int64)
            self.same_flip = bool(self.flip_level[0] == self.flip_level[1])
            self.log_p = model.pmf.log_probs()
        else:
            k = model.alphabet_size
            self.init_cdf = np.cumsum(model.initial_pmf())
            self.trans_cdf = np.cumsum(model.transition_matrix(), axis=1)
            self.power_cdf = _markov_power_cdf(model, n + ell)
            self.markov = isinstance(model, Markov)
            bits = int(math.log2(k)) if k & (k - 1) == 0 else 0
            fair = isinstance(model, Memoryless) and np.all(model.pmf.probs == 1.0 / k)
            self.uniform_bits = bits if fair else 0
            self.chan_cdf = np.cumsum(channel.rows, axis=1)
            self.log_init = model.log_initial()
            self.log_trans = model.log_transition()

    def run(self, key: int, count: int, t: int, hats: np.ndarray | None = None) -> int:
        out = np.zeros(0, dtype=np.int64) if hats is None else hats
        if self.packed:
            return int(kernels.packed_block(
                np.uint64(key), 0, count, t, self.ell, self.t_min, self.one_level, self.one_low,
                self.sample_noisy, self.flip_level, self.flip_low, self.same_flip, self.noisy_detector,
                self.log_p, self.lam, self.lam_max, self.floor, COMPARE_EPS, self.cutoff,
                self.one_sided, out))
        return int(kernels.generic_block(
            np.uint64(key), 0, count, t, self.n, self.ell, self.t_min, self.init_cdf, self.trans_cdf,
            self.power_cdf, self.markov, self.uniform_bits, self.chan_cdf, self.sample_noisy,
            self.noisy_detector, self.log_init, self.log_trans, self.lam, self.lam_max, self.floor,
            COMPARE_EPS, self.cutoff, self.one_sided, out))

    def sample_reads(self, key: int, count: int, t: int) -> np.ndarray:
        """The reads that :meth:`run` would draw, shape ``(count, 2, ell)``."""
        if self.packed:
            return kernels.packed_sample_reads(
                np.uint64(key), 0, count, t, self.ell, self.one_level, self.one_low, self.sample_noisy,
                self.flip_level, self.flip_low, self.same_flip)
        return kernels.generic_sample_reads(
            np.uint64(key), 0, count, t, self.n, self.ell, self.init_cdf, self.trans_cdf, self.power_cdf,
            self.markov, self.uniform_bits, self.chan_cdf, self.sample_noisy)


@dataclass(frozen=True)
class StratumEstimate:
    t: int
    trials: int
    errors: int

    @property
    def estimate(self) -> float:
        return self.errors / self.trials

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_interval(self.errors, self.trials)

    def to_dict(self) -> dict:
        lo, hi = self.ci
        return {"t": self.t, "trials": self.trials, "errors": self.errors,
                "estimate": self.estimate, "ci_lo": lo, "ci_hi": hi}


def _blocks(trials: int) -> Iterable[tuple[int, int]]:
    for b in range(0, (trials + BLOCK_TRIALS - 1) // BLOCK_TRIALS):
        yield b, min(BLOCK_TRIALS, trials - b * BLOCK_TRIALS)


def _workers(workers: int | None) -> int:
    return max(1, workers if workers is not None else (os.cpu_count() or 1))


def _run_strata(runner: StratumRunner, seed: int, jobs: list[tuple[int, int]], workers: int | None) -> dict[int, StratumEstimate]:
    """Simulate ``(t, trials)`` jobs; returns integer error counts per stratum."""
    tasks = [(t, b, c) for t, trials in jobs for b, c in _blocks(trials)]

    def work(task):
        t, b, c = task
        return t, runner.run(stream_key(seed, runner.n, t, b), c, t)

    errors = {t: 0 for t, _ in jobs}
    nworkers = _workers(workers)
    if nworkers == 1:
        results = map(work, tasks)
        for t, e in results:
            errors[t] += e
    else:
        with ThreadPoolExecutor(nworkers) as pool:
            for t, e in pool.map(work, tasks):
                errors[t] += e
    return {t: StratumEstimate(t, trials, errors[t]) for t, trials in jobs}


def estimate_stratum(
    config: ExperimentConfig, n: int, t: int, which_detector: str | None = None,
    trials: int | None = None, workers: int | None = None,
) -> StratumEstimate:
    """Conditional error rate ``P[T_hat != t | T = t]`` with a Wilson interval."""
    trials = config.trials_per_stratum if trials is None else trials
    if trials < MIN_TRIALS:
        raise InvalidArgument(f"at least {MIN_TRIALS} trials are needed")
    ell = config.ell(n)
    if not -(ell - 1) <= t <= ell:
        raise InvalidArgument(f"overlap {t} outside the prior support")
    which = which_detector or config.which_detector
    noisy = config.noisy if which == "auto" else which == "noisy"
    runner = StratumRunner(config, n, noisy_detector=noisy)
    return _run_strata(runner, config.seed, [(t, trials)], workers)[t]


def theory_constants(config: ExperimentConfig, n: int) -> dict:
    """Asymptotic error constant and reliable-overlap length for the config."""
    model = config.model
    if config.noisy:
        stats = pair_statistics(model.pmf, config.channel)
        rate = stats.mutual_info
    else:
        rate = entropy_rate(model)
    inverse = math.inf if rate <= 0 else 1 / rate
    phi = 2 * min(config.beta, inverse)
    if config.detector.one_sided:
        phi /= 2
    log_n = math.log(n) / math.log(model.alphabet_size)
    return {"theory_phi": phi, "t_star": log_n * inverse if rate > 0 else math.inf, "rate": rate}


@dataclass(frozen=True)
class GridRecord:
    n: int
    ell: int
    n_ell: int
    t_mdo: float
    t_star: float
    log_threshold: float
    p1: StratumEstimate
    p2: dict[int, StratumEstimate]
    p_error_exact: Fraction
    theory_phi: float
    type1_bound: float | None
    alphabet: int = 2

    @property
    def p_error_hat(self) -> float:
        return float(self.p_error_exact)

    @property
    def log_n(self) -> float:
        """``log n`` in the alphabet base."""
        return math.log(self.n) / math.log(self.alphabet)

    @property
    def phi_hat(self) -> float:
        return self.p_error_hat * self.n / self.log_n

    @property
    def phi_hat_nats(self) -> float:
        return self.p_error_hat * self.n / math.log(self.n)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "ell": self.ell,
            "n_ell": self.n_ell,
            "t_mdo": _num(self.t_mdo),
            "t_star": _num(self.t_star),
            "log_threshold": self.log_threshold,
            "p1_hat": self.p1.to_dict(),
            "p2_hat": {str(t): est.to_dict() for t, est in sorted(self.p2.items())},
            "p_error_hat": self.p_error_hat,
            "phi_hat": self.phi_hat,
            "phi_hat_nats": self.phi_hat_nats,
            "theory_phi": _num(self.theory_phi),
            "type1_bound": self.type1_bound,
        }


def _num(v: float):
    return v if math.isfinite(v) else ("Infinity" if v > 0 else "-Infinity")


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    records: tuple[GridRecord, ...]

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "records": [r.to_dict() for r in self.records]}

    def csv_rows(self) -> list[list]:
        rows = []
        for r in self.records:
            for est in [r.p1] + [r.p2[t] for t in sorted(r.p2)]:
                lo, hi = est.ci
                rows.append([r.n, r.ell, est.t, est.trials, est.errors, est.estimate, lo, hi,
                             r.phi_hat, _num(r.theory_phi)])
        return rows


CSV_HEADER = ["n", "ell", "stratum_t", "trials", "errors", "estimate", "ci_lo", "ci_hi", "phi_hat", "theory_phi"]


def type1_union_bound(stats: PairStats, log_threshold: float, t_mdo: float, ell: int, one_sided: bool) -> float:
    """Union over shifts of the truncated-MGF tail bound at the detection threshold."""
    first = int(math.floor(t_mdo)) + 1
    total = sum(type1_tail_bound(stats, log_threshold, t) for t in range(max(first, 1), ell + 1))
    if not one_sided:
        total += sum(type1_tail_bound(stats, log_threshold, t) for t in range(max(first, 1), ell))
    return total


def run_grid_point(config: ExperimentConfig, n: int, workers: int | None = None) -> GridRecord:
    runner = StratumRunner(config, n)
    ell = runner.ell
    prior = overlap_prior(n, ell)
    strata = [t for t in prior.support if t != 0 and (t > 0 or not config.detector.one_sided)]
    jobs = [(0, config.type1_trial_count(n))] + [(t, config.trials_per_stratum) for t in strata]
    started = time.perf_counter()
    results = _run_strata(runner, config.seed, jobs, workers)
    log.info("n=%d ell=%d simulated in %.1fs", n, ell, time.perf_counter() - started)
    p_error = sum(
        (prior.prob(t) * Fraction(est.errors, est.trials) for t, est in results.items()), Fraction(0)
    )
    theory = theory_constants(config, n)
    bound = None
    if runner.stats is not None and runner.stats.sigma2 > 0 and math.isfinite(runner.t_mdo):
        bound = type1_union_bound(runner.stats, runner.log_threshold, runner.t_mdo, ell, runner.one_sided)
    return GridRecord(
        n=n, ell=ell, n_ell=prior.n_ell, t_mdo=runner.t_mdo, t_star=theory["t_star"],
        log_threshold=runner.log_threshold, p1=results[0],
        p2={t: results[t] for t in strata}, p_error_exact=p_error,
        theory_phi=theory["theory_phi"], type1_bound=bound, alphabet=config.model.alphabet_size,
    )


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ExperimentReport:
    return ExperimentReport(config, tuple(run_grid_point(config, n, workers) for n in config.n_grid))


@dataclass(frozen=True)
class SweepResult:
    report: ExperimentReport
    verdicts: dict

    def to_dict(self) -> dict:
        doc = self.report.to_dict()
        doc["verdicts"] = self.verdicts
        return doc


def trend_verdicts(report: ExperimentReport) -> dict:
    recs = report.records
    phis = [r.phi_hat for r in recs]
    xs = np.log([r.n for r in recs])
    slope = float(np.polyfit(xs, phis, 1)[0]) if len(recs) > 1 else 0.0
    theory = recs[-1].theory_phi
    phi_trend = {
        "phi_hat": phis,
        "theory_phi": _num(theory),
        "strictly_decreasing": all(b < a for a, b in zip(phis, phis[1:])),
        "slope_vs_log_n": slope,
        "decreasing_trend": phis[-1] < phis[0] and slope < 0,
        "toward_theory": abs(phis[-1] - theory) < abs(phis[0] - theory) if math.isfinite(theory) else None,
    }
    scaled = [r.p1.estimate * r.n / math.sqrt(r.log_n) for r in recs]
    constants = [None if r.type1_bound is None else r.type1_bound * r.n / math.sqrt(r.log_n) for r in recs]
    type1 = {
        "p1_scaled_sqrt_log": scaled,
        "p1_scaled_log": [r.p1.estimate * r.n / r.log_n for r in recs],
        "bound_constant": constants,
        "bounded": None if None in constants else all(s <= 10 * c for s, c in zip(scaled, constants)),
    }
    last = recs[-1]
    low = [t for t in last.p2 if abs(t) <= 0.5 * last.t_star]
    high = [t for t in last.p2 if abs(t) >= 2 * last.t_star]
    profile = {
        "n": last.n,
        "t_star": _num(last.t_star),
        "short_overlaps_missed": all(last.p2[t].estimate >= 0.9 for t in low),
        "long_overlaps_found": all(last.p2[t].estimate <= 0.1 for t in high),
        "short_checked": len(low),
        "long_checked": len(high),
    }
    return {"phi_trend": phi_trend, "type1_scaling": type1, "profile": profile}


def sweep(config: ExperimentConfig, workers: int | None = None) -> SweepResult:
    grid = config.n_grid
    if len(grid) < 3:
        raise InvalidArgument("'n_grid' needs at least 3 points for a sweep")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidArgument("'n_grid' must be strictly increasing")
    report = run_experiment(config, workers)
    return SweepResult(report, trend_verdicts(report))
