"""End-to-end acceptance checks, one test per criterion.

Tolerances are pinned constants.  The large Monte Carlo runs are module-scoped
fixtures shared between criteria; every run uses a fixed seed.
"""

import json
import math
import time

import pytest

from overlapdetect.cli import run as cli_run
from overlapdetect.detectors import COMPARE_EPS, DetectorConfig, detect_noiseless, detect_noisy, min_detectable_overlap
from overlapdetect.montecarlo import ExperimentConfig, run_experiment, stream_generator, sweep
from overlapdetect.oracle import enumerate_posterior, partial_power_sum, repetition_probability, tie_rule_argmax
from overlapdetect.reading_channel import binary_symmetric_channel, chernoff_exponents, identity_channel, pair_statistics
from overlapdetect.sampler import overlap_prior, sample_pair, sample_pair_given_t
from overlapdetect.source_models import Memoryless, entropy_rate, uniform

SEED = 20240101
GRID = tuple(2**k for k in (12, 14, 16, 18, 20))
N_MAX = 2**20

ORACLE_INSTANCES = 10_000
NEVER_DETECT_INPUTS = 100_000
EXPONENT_TRIALS = 1_000_000

NOISELESS_PHI_RANGE = (1.5, 4.0)
NOISY_PHI_FACTOR = 2.0
SMALL_BETA_RANGE = (0.8, 1.3)
TYPE1_LOG_LIMIT = 0.5
TYPE1_BOUND_FACTOR = 10.0
SHORT_MISS_MIN, LONG_MISS_MAX = 0.9, 0.1
MU_RATIO_RANGE = (1.5, 2.5)
DECAY_LIMIT = 1e-2

ORACLE_SECONDS = {"noiseless": 60.0, "noisy": 120.0}
NOISELESS_SWEEP_SECONDS = 15 * 60.0
NOISY_SWEEP_SECONDS = 20 * 60.0

SOURCES = (uniform(2), Memoryless([0.75, 0.25]))


def timed(fn):
    started = time.perf_counter()
    result = fn()
    return result, time.perf_counter() - started


@pytest.fixture(scope="module")
def noiseless_sweep():
    cfg = ExperimentConfig(model=uniform(2), beta=3, n_grid=GRID, trials_per_stratum=100_000,
                           type1_trials_per_n=2000, seed=SEED)
    return timed(lambda: sweep(cfg))


@pytest.fixture(scope="module")
def noisy_sweep():
    cfg = ExperimentConfig(model=uniform(2), beta=10, n_grid=GRID, channel=binary_symmetric_channel(0.1),
                           trials_per_stratum=20_000, type1_trials_per_n=20, seed=SEED)
    return timed(lambda: sweep(cfg))


@pytest.fixture(scope="module")
def mu_reports():
    reports = {}
    for mu in (1.0, 2.0):
        cfg = ExperimentConfig(model=uniform(2), beta=3, n_grid=GRID, trials_per_stratum=100_000,
                               type1_trials_per_n=64, detector=DetectorConfig(mu=mu), seed=SEED)
        reports[mu] = run_experiment(cfg)
    return reports


def oracle_agreement(channel_for, detector, seed):
    rng = stream_generator(seed)
    mismatches = []
    for i in range(ORACLE_INSTANCES):
        n = int(rng.integers(16, 33))
        ell = int(rng.integers(4, 6))
        model = SOURCES[i % 2]
        channel = channel_for(i)
        pair = sample_pair(model, channel, n, ell, rng)
        t_hat = detector(pair, model, channel, n)
        post = enumerate_posterior(pair, model, channel, n, ell)
        if t_hat != tie_rule_argmax(post.log_unnormalized, COMPARE_EPS):
            mismatches.append(i)
    return mismatches


def test_criterion_01_noiseless_oracle_equivalence():
    identity = identity_channel(2)
    mismatches, seconds = timed(lambda: oracle_agreement(
        lambda i: identity, lambda pair, model, channel, n: detect_noiseless(pair, model, n).t_hat, seed=1))
    assert mismatches == []
    assert seconds < ORACLE_SECONDS["noiseless"]


def test_criterion_02_noisy_oracle_equivalence():
    channels = (binary_symmetric_channel(0.1), binary_symmetric_channel(0.25))
    mismatches, seconds = timed(lambda: oracle_agreement(
        lambda i: channels[(i // 2) % 2],
        lambda pair, model, channel, n: detect_noisy(pair, pair_statistics(model.pmf, channel), n).t_hat,
        seed=2))
    assert mismatches == []
    assert seconds < ORACLE_SECONDS["noisy"]


@pytest.mark.parametrize("name,model,flip,n,ell", [
    ("noiseless uniform", uniform(2), 0.0, 256, 12),
    ("noiseless skewed", Memoryless([0.75, 0.25]), 0.0, 256, 12),
    ("noisy uniform", uniform(2), 0.1, 256, 24),
    ("noisy skewed", Memoryless([0.75, 0.25]), 0.25, 256, 24),
])
def test_criterion_03_never_detect(name, model, flip, n, ell):
    channel = identity_channel(2) if flip == 0 else binary_symmetric_channel(flip)
    if flip == 0:
        t_mdo = min_detectable_overlap(model, n, ell)
        decide = lambda pair: detect_noiseless(pair, model, n).t_hat
    else:
        stats = pair_statistics(model.pmf, channel)
        t_mdo = min_detectable_overlap(stats, n, ell)
        decide = lambda pair: detect_noisy(pair, stats, n).t_hat
    assert 1 <= t_mdo < ell
    rng = stream_generator(3, n, ell, int(flip * 100))
    # half the inputs come from the prior, half are short true overlaps
    short = [t for t in range(-(ell - 1), ell + 1) if 0 < abs(t) <= t_mdo]
    violations = 0
    for i in range(NEVER_DETECT_INPUTS):
        if i % 2:
            pair = sample_pair_given_t(model, channel, n, ell, short[i // 2 % len(short)], rng)
        else:
            pair = sample_pair(model, channel, n, ell, rng)
        t_hat = decide(pair)
        violations += 0 < abs(t_hat) <= t_mdo
    assert violations == 0


def test_criterion_04_noiseless_phi_trend(noiseless_sweep):
    result, seconds = noiseless_sweep
    trend = result.verdicts["phi_trend"]
    assert trend["theory_phi"] == 2.0
    assert trend["strictly_decreasing"], trend["phi_hat"]
    lo, hi = NOISELESS_PHI_RANGE
    assert lo <= trend["phi_hat"][-1] <= hi
    assert seconds <= NOISELESS_SWEEP_SECONDS


def test_criterion_05_noisy_phi_trend(noisy_sweep):
    result, seconds = noisy_sweep
    trend = result.verdicts["phi_trend"]
    info = pair_statistics([0.5, 0.5], binary_symmetric_channel(0.1)).mutual_info
    assert trend["theory_phi"] == pytest.approx(2 / info)
    assert trend["theory_phi"] == pytest.approx(6.25, abs=0.01)
    phi = trend["phi_hat"][-1]
    assert trend["theory_phi"] / NOISY_PHI_FACTOR <= phi <= trend["theory_phi"] * NOISY_PHI_FACTOR
    assert trend["decreasing_trend"], trend["phi_hat"]
    assert seconds <= NOISY_SWEEP_SECONDS


def test_criterion_06_small_beta():
    cfg = ExperimentConfig(model=uniform(2), beta=0.5, n_grid=(N_MAX,), trials_per_stratum=100_000,
                           type1_trials=1_000_000, seed=SEED)
    rec = run_experiment(cfg).records[0]
    assert rec.theory_phi == 1.0
    lo, hi = SMALL_BETA_RANGE
    assert lo * rec.theory_phi <= rec.phi_hat <= hi * rec.theory_phi


def test_criterion_07_type1_scaling(noiseless_sweep, noisy_sweep):
    noiseless = noiseless_sweep[0].report.records[-1]
    assert noiseless.n == N_MAX
    assert noiseless.p1.estimate * noiseless.n / noiseless.log_n < TYPE1_LOG_LIMIT

    noisy = noisy_sweep[0].report.records[-1]
    constant = noisy.type1_bound * noisy.n / math.sqrt(noisy.log_n)
    scaled = noisy.p1.estimate * noisy.n / math.sqrt(noisy.log_n)
    assert scaled <= TYPE1_BOUND_FACTOR * constant


def test_criterion_08_type2_profile(noiseless_sweep):
    rec = noiseless_sweep[0].report.records[-1]
    t_star = math.log2(rec.n) / entropy_rate(uniform(2))
    short = [t for t in rec.p2 if abs(t) <= 0.5 * t_star]
    long = [t for t in rec.p2 if abs(t) >= 2 * t_star]
    assert short and long
    assert all(rec.p2[t].estimate >= SHORT_MISS_MIN for t in short)
    assert all(rec.p2[t].estimate <= LONG_MISS_MAX for t in long)


def test_criterion_09_mu_tradeoff(mu_reports):
    one, two = mu_reports[1.0].records, mu_reports[2.0].records
    for a, b in zip(one, two):
        assert b.p1.estimate < a.p1.estimate, a.n
    ratio = two[-1].p_error_hat / one[-1].p_error_hat
    lo, hi = MU_RATIO_RANGE
    assert lo <= ratio <= hi


def test_criterion_10_partial_sum_and_repetition_decay():
    pps, rep = [], []
    for k in range(10, 21):
        n = 2**k
        t = math.ceil(1.2 * k)
        ell = overlap_prior(n, math.ceil(3 * k)).ell
        pps.append(n * partial_power_sum([0.5, 0.5], t, n - 2 * ell + 1, 2, "ge"))
        worst = max(repetition_probability(uniform(2), t, s).value for s in range(1, ell + 1))
        rep.append(math.log(n) * worst)
    assert all(b < a for a, b in zip(rep, rep[1:]))
    assert rep[-1] < DECAY_LIMIT
    assert all(b < a for a, b in zip(pps, pps[1:])), pps
    assert pps[-1] < DECAY_LIMIT, pps[-1]


def test_criterion_11_exponents():
    stats = pair_statistics([0.5, 0.5], binary_symmetric_channel(0.1))
    table = stats.log_lambda
    exps = chernoff_exponents(stats, 2.0**20, 20)
    rng = stream_generator(11)
    chunk = 100_000
    for t in (20, 40, 80):
        below = 0
        over = {k: 0 for k in (1, 2, 5)}
        for _ in range(EXPONENT_TRIALS // chunk):
            x = rng.integers(0, 2, size=(chunk, t + 5))
            y = x ^ (rng.random(x.shape) < 0.1)
            y2 = x ^ (rng.random(x.shape) < 0.1)
            below += int((table[y[:, :t], y2[:, :t]].sum(axis=1) <= 0).sum())
            for k in over:
                over[k] += int((table[y[:, k:k + t], y2[:, :t]].sum(axis=1) > 0).sum())
        assert below / EXPONENT_TRIALS <= math.exp(-t * exps.E_minus_0.nats)
        for k, count in over.items():
            assert count / EXPONENT_TRIALS <= 2 * math.exp(-(t - 1) * exps.E_plus.nats / 2), (t, k)


def test_criterion_12_determinism(tmp_path):
    configs = {
        "simulate": {"model": {"type": "memoryless", "probs": [0.7, 0.3]}, "channel": {"rows": [[0.95, 0.05], [0.05, 0.95]]},
                     "beta": 2, "n_grid": [1024], "trials_per_stratum": 500, "type1_trials": 20_000, "seed": 5},
        "sweep": {"model": {"type": "markov", "kernel": [[0.8, 0.2], [0.3, 0.7]]}, "beta": 2,
                  "n_grid": [256, 512, 1024], "trials_per_stratum": 300, "type1_trials_per_n": 8, "seed": 6},
        "analyze": {"model": {"type": "memoryless", "probs": [0.5, 0.3, 0.2]}, "beta": 2, "n": 4096},
        "oracle-check": {"n": 16, "ell": 4, "instances": 500},
    }
    for command, doc in configs.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(doc))
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / command / run
            assert cli_run([command, "--config", str(path), "--seed", "9", "--out", str(out)]) == 0
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        assert outputs[0] == outputs[1]
        assert outputs[0]
