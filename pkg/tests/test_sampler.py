from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from overlapdetect.errors import InvalidArgument
from overlapdetect.reading_channel import binary_symmetric_channel, identity_channel
from overlapdetect.sampler import (
    ReadPair,
    disjoint_offset,
    offset_for_overlap,
    offset_window,
    overlap_from_indices,
    overlap_prior,
    sample_pair,
    sample_pair_given_t,
)
from overlapdetect.source_models import Markov, Memoryless, symmetric_kernel, uniform

# upper quantiles of the chi-square law
CHI2_DF1_Q99 = 6.635
CHI2_DF15_Q999 = 37.697


def chi2_table(table):
    table = np.asarray(table, dtype=float)
    expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True) / table.sum()
    mask = expected > 0
    return float(((table - expected) ** 2 / np.where(mask, expected, 1))[mask].sum())


class TestOverlapPrior:
    def test_example(self):
        prior = overlap_prior(100, 5)
        assert prior.prob(0) == Fraction(91, 100)
        nonzero = [t for t in prior.support if t != 0]
        assert nonzero == [-4, -3, -2, -1, 1, 2, 3, 4, 5]
        assert all(prior.prob(t) == Fraction(1, 100) for t in nonzero)

    def test_minimal_n(self):
        assert overlap_prior(10, 5).prob(0) == Fraction(1, 10)

    def test_outside_support(self):
        prior = overlap_prior(100, 5)
        assert prior.prob(6) == 0 and prior.prob(-5) == 0

    @given(st.integers(2, 40), st.integers(0, 500))
    def test_total_mass_exact(self, ell, extra):
        prior = overlap_prior(2 * ell + extra, ell)
        assert sum(prior.pmf().values()) == 1

    def test_too_short(self):
        with pytest.raises(InvalidArgument):
            overlap_prior(9, 5)

    def test_read_length(self):
        with pytest.raises(InvalidArgument):
            overlap_prior(100, 1)


class TestSignedOverlap:
    @pytest.mark.parametrize("i1,i2,t", [(10, 13, 2), (13, 10, -2), (1, 50, 0), (7, 7, 5), (10, 15, 0), (15, 10, 0)])
    def test_examples(self, i1, i2, t):
        assert overlap_from_indices(i1, i2, 5) == t

    @given(st.integers(-50, 50), st.integers(-50, 50), st.integers(2, 20))
    def test_range_and_antisymmetry(self, i1, i2, ell):
        t = overlap_from_indices(i1, i2, ell)
        assert -(ell - 1) <= t <= ell
        if i1 != i2:
            assert overlap_from_indices(i2, i1, ell) == -t

    @given(st.integers(2, 20), st.data())
    def test_offset_inverts_overlap(self, ell, data):
        t = data.draw(st.integers(-(ell - 1), ell).filter(lambda v: v != 0))
        assert overlap_from_indices(0, offset_for_overlap(t, ell), ell) == t


class TestWindows:
    def test_low_edge(self):
        lo, hi = offset_window(1, 100, 5)
        assert (1 + lo, 1 + hi) == (-3, 96)
        assert hi - lo + 1 == 100

    def test_middle(self):
        lo, hi = offset_window(50, 100, 5)
        assert (50 + lo, 50 + hi) == (1, 100)

    def test_high_edge(self):
        assert offset_window(99, 100, 5) == (-95, 4)

    @given(st.integers(2, 10), st.integers(0, 40), st.data())
    def test_windows_hold_every_overlap(self, ell, extra, data):
        n = 2 * ell + extra
        i1 = data.draw(st.integers(1, n))
        lo, hi = offset_window(i1, n, ell)
        assert hi - lo + 1 == n
        counts = Counter(overlap_from_indices(i1, i1 + d, ell) for d in range(lo, hi + 1))
        assert counts[0] == n - (2 * ell - 1)
        assert all(counts[t] == 1 for t in range(-(ell - 1), ell + 1) if t != 0)

    @given(st.integers(2, 10), st.integers(0, 40), st.data())
    def test_disjoint_offsets_enumerate_window(self, ell, extra, data):
        n = 2 * ell + extra
        i1 = data.draw(st.integers(1, n))
        lo, hi = offset_window(i1, n, ell)
        expected = [d for d in range(lo, hi + 1) if overlap_from_indices(i1, i1 + d, ell) == 0]
        assert [disjoint_offset(i1, n, ell, k) for k in range(n - 2 * ell + 1)] == expected


class TestSamplePair:
    def test_truth_consistent(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            pair = sample_pair(uniform(2), identity_channel(2), 20, 4, rng)
            assert overlap_from_indices(pair.i1, pair.i2, 4) == pair.t
            assert 2 - 4 <= min(pair.i1, pair.i2) and max(pair.i1, pair.i2) + 3 <= 20 + 2 * 4 - 2
            assert pair.read1.size == pair.read2.size == 4

    def test_edge_window_example(self):
        rng = np.random.default_rng(1)
        seen = set()
        for _ in range(20_000):
            pair = sample_pair(uniform(2), identity_channel(2), 100, 5, rng)
            if pair.i1 == 1:
                seen.add(pair.i2)
        assert min(seen) == -3 and max(seen) <= 96

    @pytest.mark.slow
    def test_prior_frequency(self):
        rng = np.random.default_rng(2)
        draws = 10**6
        zeros = sum(sample_pair(uniform(2), identity_channel(2), 100, 5, rng).t == 0 for _ in range(draws))
        assert abs(zeros / draws - 0.91) < 0.002

    def test_noiseless_overlap_matches(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            pair = sample_pair(Markov(symmetric_kernel(2, 0.2)), identity_channel(2), 12, 4, rng)
            t = pair.t
            if t > 0:
                assert np.array_equal(pair.read1[4 - t:], pair.read2[:t])
            elif t < 0:
                assert np.array_equal(pair.read2[4 + t:], pair.read1[:-t])


class TestSampleGivenT:
    def test_full_overlap(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            pair = sample_pair_given_t(uniform(3), identity_channel(3), 30, 5, 5, rng)
            assert pair.i1 == pair.i2 and pair.t == 5
            assert np.array_equal(pair.read1, pair.read2)

    def test_partial_overlap(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            pair = sample_pair_given_t(uniform(2), identity_channel(2), 30, 5, 2, rng)
            assert np.array_equal(pair.read1[-2:], pair.read2[:2])

    @pytest.mark.parametrize("t", [-5, 6, 100])
    def test_outside_support(self, t):
        with pytest.raises(InvalidArgument):
            sample_pair_given_t(uniform(2), identity_channel(2), 30, 5, t, np.random.default_rng(0))

    @given(st.integers(-4, 5))
    def test_truth_matches_request(self, t):
        rng = np.random.default_rng(abs(t))
        for _ in range(20):
            pair = sample_pair_given_t(uniform(2), identity_channel(2), 15, 5, t, rng)
            assert pair.t == t == overlap_from_indices(pair.i1, pair.i2, 5)

    def test_disjoint_reads_independent(self):
        rng = np.random.default_rng(6)
        model = Memoryless([0.7, 0.3])
        aligned = np.zeros((2, 2))
        boundary = np.zeros((2, 2))
        for _ in range(10**5):
            pair = sample_pair_given_t(model, identity_channel(2), 100, 5, 0, rng)
            aligned[pair.read1[0], pair.read2[0]] += 1
            boundary[pair.read1[-1], pair.read2[0]] += 1
        assert chi2_table(aligned) < CHI2_DF1_Q99
        assert chi2_table(boundary) < CHI2_DF1_Q99

    def test_stratified_mixture_matches_full_model(self):
        n, ell, draws = 6, 2, 100_000
        model, channel = Memoryless([0.7, 0.3]), binary_symmetric_channel(0.2)
        prior = overlap_prior(n, ell)
        rng = np.random.default_rng(7)
        support = prior.support
        weights = np.array([float(prior.prob(t)) for t in support])

        def cell(pair):
            return int(pair.read1[0] * 8 + pair.read1[1] * 4 + pair.read2[0] * 2 + pair.read2[1])

        table = np.zeros((2, 16))
        for _ in range(draws):
            table[0, cell(sample_pair(model, channel, n, ell, rng))] += 1
        for t in rng.choice(support, size=draws, p=weights):
            table[1, cell(sample_pair_given_t(model, channel, n, ell, int(t), rng))] += 1
        assert chi2_table(table) < CHI2_DF15_Q999


class TestReadPairJson:
    def test_round_trip(self):
        pair = sample_pair(uniform(2), identity_channel(2), 20, 4, np.random.default_rng(8))
        again = ReadPair.from_dict(pair.to_dict())
        assert again.to_dict() == pair.to_dict()
