import itertools
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boot2lab.sampling import (
    DegenerateResampleError,
    ResampleCounts,
    SeedSpec,
    bootstrap_counts,
    derive_rng,
    lag1_autocorrelation,
    sample_gaussian,
    weighted_mean,
)


def exact_weighted_mean(values, counts):
    num = sum(Fraction(float(v)) * int(c) for v, c in zip(values, counts))
    return num / sum(int(c) for c in counts)


def enumerate_counts(n):
    """Distribution of count vectors from all n**n equally likely index tuples."""
    dist = Counter()
    for idx in itertools.product(range(n), repeat=n):
        dist[tuple(np.bincount(idx, minlength=n))] += Fraction(1, n**n)
    return dist


class TestDeriveRng:
    def test_same_spec_same_sequence(self):
        a = derive_rng(SeedSpec(42, (0,))).random(100)
        b = derive_rng(SeedSpec(42, (0,))).random(100)
        assert np.array_equal(a, b)

    def test_distinct_paths_differ(self):
        a = derive_rng(SeedSpec(42, (0,))).random(100)
        b = derive_rng(SeedSpec(42, (1,))).random(100)
        assert not np.array_equal(a, b)

    def test_nested_path_differs_from_prefix(self):
        a = derive_rng(SeedSpec(42, (1,))).random(10)
        b = derive_rng(SeedSpec(42, (1, 0))).random(10)
        assert not np.array_equal(a, b)

    def test_serial_correlation_regression(self):
        x = derive_rng(SeedSpec(7, (3,))).random(10**6)
        rho = lag1_autocorrelation(x)
        assert abs(rho) < 0.01
        assert rho == pytest.approx(-0.0004495396620122155, abs=1e-15)

    def test_child_extends_path(self):
        assert SeedSpec(3, (1,)).child(2, 5) == SeedSpec(3, (1, 2, 5))

    @pytest.mark.parametrize("seed,path", [(-1, ()), (2**64, ()), (1, (-3,))])
    def test_invalid_seed_spec(self, seed, path):
        with pytest.raises(ValueError):
            SeedSpec(seed, path)


class TestSampleGaussian:
    def test_zero_sd_is_constant(self):
        assert sample_gaussian(derive_rng(SeedSpec(0)), 5, 0, 3).tolist() == [5, 5, 5]

    def test_negative_sd_rejected(self):
        with pytest.raises(ValueError):
            sample_gaussian(derive_rng(SeedSpec(0)), 0, -1, 3)

    def test_standard_normal_moments(self):
        x = sample_gaussian(derive_rng(SeedSpec(1)), 0, 1, 10**6)
        assert abs(x.mean()) < 4 / np.sqrt(10**6)
        assert x.std(ddof=1) == pytest.approx(1, rel=0.01)

    def test_full_scale_mean(self):
        x = sample_gaussian(derive_rng(SeedSpec(2)), 5, 100, 10**6)
        assert abs(x.mean() - 5) < 0.4


class TestBootstrapCounts:
    def test_single_point(self):
        c = bootstrap_counts(derive_rng(SeedSpec(0)), 1)
        assert c.counts.tolist() == [1] and c.total == 1

    def test_zero_n_rejected(self):
        with pytest.raises(ValueError):
            bootstrap_counts(derive_rng(SeedSpec(0)), 0)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            bootstrap_counts(derive_rng(SeedSpec(0)), 3, "stratified")

    def test_n2_matches_enumeration(self):
        expected = enumerate_counts(2)
        assert expected == {(2, 0): Fraction(1, 4), (1, 1): Fraction(1, 2), (0, 2): Fraction(1, 4)}
        rng = derive_rng(SeedSpec(11))
        draws = 10**5
        seen = Counter(tuple(bootstrap_counts(rng, 2).counts.tolist()) for _ in range(draws))
        assert set(seen) <= set(expected)
        for outcome, p in expected.items():
            p = float(p)
            assert abs(seen[outcome] / draws - p) < 3 * np.sqrt(p * (1 - p) / draws)

    def test_n3_matches_enumeration(self):
        expected = enumerate_counts(3)
        rng = derive_rng(SeedSpec(12))
        draws = 30000
        seen = Counter(tuple(bootstrap_counts(rng, 3).counts.tolist()) for _ in range(draws))
        for outcome, p in expected.items():
            p = float(p)
            assert abs(seen[outcome] / draws - p) < 4 * np.sqrt(p * (1 - p) / draws)

    @given(n=st.integers(1, 500), seed=st.integers(0, 2**64 - 1))
    @settings(max_examples=50, deadline=None)
    def test_multinomial_total_is_n(self, n, seed):
        c = bootstrap_counts(derive_rng(SeedSpec(seed)), n)
        assert c.total == n == int(c.counts.sum())
        assert c.counts.min() >= 0

    def test_poisson_total_near_n(self):
        c = bootstrap_counts(derive_rng(SeedSpec(5)), 10**6, "poisson")
        assert abs(c.total - 10**6) < 4000
        assert c.total == int(c.counts.sum())

    def test_poisson_counts_have_unit_mean_and_variance(self):
        c = bootstrap_counts(derive_rng(SeedSpec(6)), 10**6, "poisson").counts
        assert c.mean() == pytest.approx(1, abs=0.004)
        assert c.var() == pytest.approx(1, abs=0.01)


class TestWeightedMean:
    def test_uniform(self):
        assert weighted_mean([4.0, 6.0], ResampleCounts.from_counts([1, 1])) == 5

    def test_all_weight_on_one(self):
        assert weighted_mean([4.0, 6.0], ResampleCounts.from_counts([2, 0])) == 4

    def test_zero_total_is_degenerate(self):
        with pytest.raises(DegenerateResampleError):
            weighted_mean([4.0, 6.0], ResampleCounts.from_counts([0, 0]))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            weighted_mean([4.0, 6.0, 1.0], ResampleCounts.from_counts([1, 1]))

    def test_catastrophic_cancellation_case(self):
        n = 10**6
        values = np.concatenate([np.full(n, 1e16), np.ones(n)])
        counts = ResampleCounts.uniform(2 * n)
        got = weighted_mean(values, counts)
        assert got == float(Fraction(10**16 + 1, 2))
        # the same values interleaved
        values = np.empty(2 * n)
        values[0::2], values[1::2] = 1e16, 1.0
        assert weighted_mean(values, counts) == float(Fraction(10**16 + 1, 2))

    def test_naive_sum_would_fail_here(self):
        values = np.array([1e16, 1.0, 1.0, 1.0, 1.0, -1e16])
        counts = ResampleCounts.from_counts([1, 1, 1, 1, 1, 1])
        assert weighted_mean(values, counts) == pytest.approx(4 / 6, rel=1e-15)

    @given(
        st.lists(
            st.tuples(
                st.floats(-1e12, 1e12, allow_nan=False, allow_infinity=False),
                st.integers(0, 7),
            ),
            min_size=1,
            max_size=60,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_exact_rational(self, pairs):
        values = np.array([v for v, _ in pairs])
        counts = np.array([c for _, c in pairs])
        if counts.sum() == 0:
            counts[0] = 1
        exact = exact_weighted_mean(values, counts)
        got = weighted_mean(values, ResampleCounts.from_counts(counts))
        scale = max(float(abs(exact)), np.abs(values).max(), 1e-300)
        assert abs(Fraction(got) - exact) <= 2 * Fraction(np.spacing(scale))

    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=200))
    @settings(max_examples=100, deadline=None)
    def test_uniform_counts_equal_mean(self, xs):
        x = np.array(xs)
        got = weighted_mean(x, ResampleCounts.uniform(x.size))
        assert got == pytest.approx(float(np.mean(x)), rel=1e-12, abs=1e-9)

    def test_random_case_correctly_rounded(self):
        rng = derive_rng(SeedSpec(9))
        x = rng.normal(5, 100, 5000)
        c = bootstrap_counts(rng, 5000)
        got = weighted_mean(x, c)
        exact = exact_weighted_mean(x, c.counts)
        assert abs(Fraction(got) - exact) <= Fraction(np.spacing(abs(got)))


def test_reproducible_counts_across_calls():
    a = bootstrap_counts(derive_rng(SeedSpec(3, (4, 5))), 1000).counts
    b = bootstrap_counts(derive_rng(SeedSpec(3, (4, 5))), 1000).counts
    assert np.array_equal(a, b)
