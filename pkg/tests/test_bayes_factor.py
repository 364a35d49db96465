"""Tests for the closed-form conditional Bayes factors."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from core_model import Dataset, Hyperparams, MixtureDraw
from nodes.bayes_factor_node import (
    BayesFactorNode,
    LevelSuffStats,
    accumulate_block_stats,
    accumulate_suff_stats,
    dominant_alternative,
    floor_weights,
    log_bf11,
    log_bf12,
    log_rising_factorial,
    make_triple,
    posterior_probs,
    stats_block_width,
    warn_tiny_variances,
)
from nodes.hyperparam_tuner_node import default_hyperparams
from utils.errors import NumericError
from utils.scheduler import make_generator

PRIOR_KAPPA = (0.5, 1 / 6, 1 / 6, 1 / 6)
MONTE_CARLO_SEEDS = [2, 3, 4] + [pytest.param(seed, marks=pytest.mark.slow) for seed in range(200, 247)]
QUADRATURE_SEEDS = [5, 6] + [pytest.param(seed, marks=pytest.mark.slow) for seed in range(300, 318)]


def _random_instance(seed, n, k, d):
    rng = make_generator(seed)
    y = rng.normal(size=n)
    x = rng.integers(0, d, size=n)
    allocations = rng.integers(0, k, size=n)
    draw = MixtureDraw(
        weights=rng.dirichlet(np.ones(k)),
        means=rng.normal(size=k),
        variances=rng.uniform(0.5, 2.0, size=k),
        allocations=allocations,
    )
    return y, x, draw


def _log_npdf(t, mean, variance):
    return -0.5 * (math.log(2 * math.pi * variance) + (np.asarray(t) - mean) ** 2 / variance)


def _stats_from_counts(counts):
    counts = np.asarray(counts)
    return LevelSuffStats(counts=counts, sums=np.zeros(counts.shape), sumsq=np.zeros(counts.shape))


class TestSufficientStatistics:

    def test_empty(self):
        stats_ = accumulate_suff_stats([], [], [], k=2, levels=2)
        assert stats_.counts.shape == (2, 2)
        assert not np.any(stats_.counts) and not np.any(stats_.sums) and not np.any(stats_.sumsq)

    def test_single_cell(self):
        y = np.array([1.0, 2.0, 4.0])
        stats_ = accumulate_suff_stats(y, [0, 0, 0], [0, 0, 0], k=2, levels=2)
        assert stats_.counts[0, 0] == 3 and stats_.counts.sum() == 3
        assert stats_.sums[0, 0] == pytest.approx(7.0)
        assert stats_.sumsq[0, 0] == pytest.approx(21.0)

    def test_matches_double_loop(self):
        y, x, draw = _random_instance(1, n=50, k=3, d=2)
        stats_ = accumulate_suff_stats(y, x, draw.allocations, k=3, levels=2)
        counts = np.zeros((3, 2))
        sums = np.zeros((3, 2))
        sumsq = np.zeros((3, 2))
        for i in range(50):
            h, l = draw.allocations[i], x[i]
            counts[h, l] += 1
            sums[h, l] += y[i]
            sumsq[h, l] += y[i] ** 2
        np.testing.assert_array_equal(stats_.counts, counts)
        np.testing.assert_allclose(stats_.sums, sums, rtol=1e-14)
        np.testing.assert_allclose(stats_.sumsq, sumsq, rtol=1e-14)

    def test_block_excludes_missing_codes(self):
        y = np.array([1.0, 2.0, 3.0])
        x = np.array([[0, 1], [255, 1], [1, 0]], dtype=np.uint8)
        stats_ = accumulate_block_stats(y, x, np.array([0, 0, 1]), k=2, d=2)
        assert stats_.counts.shape == (2, 2, 2)
        assert stats_.counts[0].sum() == 2
        assert stats_.counts[1].sum() == 3


class TestLogBF11:

    def test_zero_counts(self):
        hp = Hyperparams(k=2, tau_omega=2.0)
        assert log_bf11(_stats_from_counts(np.zeros((2, 2))), np.array([0.3, 0.7]), hp) == pytest.approx(0.0)

    def test_single_component(self):
        hp = Hyperparams(k=1, tau_omega=5.0)
        assert log_bf11(_stats_from_counts([[4, 7]]), np.array([1.0]), hp) == pytest.approx(0.0, abs=1e-12)

    def test_hand_evaluated_case(self):
        hp = Hyperparams(k=2, tau_omega=2.0)
        value = log_bf11(_stats_from_counts([[2, 0], [0, 2]]), np.array([0.5, 0.5]), hp)
        assert value == pytest.approx(math.log(16 / 9), abs=1e-10)
        assert value == pytest.approx(0.575364, abs=1e-6)

    @pytest.mark.parametrize("seed", MONTE_CARLO_SEEDS)
    def test_monte_carlo_dirichlet_integration(self, seed):
        k, d, samples = 3, 2, 200_000
        y, x, draw = _random_instance(seed, n=12, k=k, d=d)
        hp = default_hyperparams(k)
        stats_ = accumulate_suff_stats(y, x, draw.allocations, k, d)
        w = floor_weights(draw.weights)
        rng = make_generator(100 + seed)

        mc_log, tolerance = 0.0, 0.0
        for level in range(d):
            omega = rng.dirichlet(hp.tau_omega * w, size=samples)
            integrand = np.prod(omega ** stats_.counts[:, level], axis=1)
            mean = integrand.mean()
            mc_log += math.log(mean)
            tolerance += 3 * integrand.std() / math.sqrt(samples) / mean
        mc_log -= float(stats_.totals @ np.log(w))
        assert float(log_bf11(stats_, draw.weights, hp)) == pytest.approx(mc_log, abs=tolerance)


class TestLogBF12:

    def test_zero_counts(self):
        draw = MixtureDraw([0.4, 0.6], [0.0, 1.0], [1.0, 2.0], [0, 1])
        assert log_bf12(_stats_from_counts(np.zeros((2, 3))), draw, None, Hyperparams(k=2)) == pytest.approx(0.0)

    @staticmethod
    def _quadrature_log_bf12(y, x, mu1, s2_1, hp):
        a1 = hp.tau_sigma / s2_1 ** 2
        b1 = hp.tau_sigma / s2_1
        prior = stats.invgamma(a1, scale=b1)
        total = 0.0
        for level in np.unique(x):
            ys = y[x == level]

            def inner(s2):
                sd = math.sqrt(s2 / hp.tau_mu)
                lo = min(mu1, ys.min()) - 12 * sd
                hi = max(mu1, ys.max()) + 12 * sd
                value, _ = integrate.quad(
                    lambda m: math.exp(_log_npdf(ys, m, s2).sum() + _log_npdf(m, mu1, sd * sd)),
                    lo, hi, epsabs=0, epsrel=1e-11, limit=200)
                return value * prior.pdf(s2)

            marginal, _ = integrate.quad(inner, prior.ppf(1e-13), prior.ppf(1 - 1e-13),
                                         epsabs=0, epsrel=1e-10, limit=200)
            total += math.log(marginal) - stats.norm.logpdf(ys, mu1, math.sqrt(s2_1)).sum()
        return total

    def test_observations_at_component_mean(self):
        hp = Hyperparams(k=1)
        y = np.array([0.7, 0.7])
        x = np.array([0, 1])
        draw = MixtureDraw([1.0], [0.7], [1.0], [0, 0])
        exact = float(log_bf12(accumulate_suff_stats(y, x, draw.allocations, 1, 2), draw, None, hp))
        oracle = self._quadrature_log_bf12(y, x, 0.7, 1.0, hp)
        assert exact == pytest.approx(oracle, rel=1e-4, abs=1e-7)

    @pytest.mark.parametrize("seed", QUADRATURE_SEEDS)
    def test_quadrature_oracle(self, seed):
        rng = make_generator(seed)
        hp = Hyperparams(k=1)
        n = 6
        mu1, s2_1 = rng.normal(scale=0.5), rng.uniform(0.5, 1.5)
        y = mu1 + 0.6 * rng.standard_normal(n)
        x = np.array([0, 1, 0, 1, 0, 1])
        draw = MixtureDraw([1.0], [mu1], [s2_1], np.zeros(n, dtype=int))
        exact = float(log_bf12(accumulate_suff_stats(y, x, draw.allocations, 1, 2), draw, None, hp))
        oracle = self._quadrature_log_bf12(y, x, mu1, s2_1, hp)
        assert exact == pytest.approx(oracle, rel=1e-4, abs=1e-7)

    def test_tiny_component_variance_stays_accurate(self):
        hp = Hyperparams(k=1)
        s2 = 1e-6
        y = 1e-3 * np.array([0.3, -0.5, 1.1, 0.2, 0.8, -1.2])
        x = np.array([0, 0, 0, 0, 1, 1])
        draw = MixtureDraw([1.0], [0.0], [s2], np.zeros(6, dtype=int))
        exact = float(log_bf12(accumulate_suff_stats(y, x, draw.allocations, 1, 2), draw, None, hp))

        a = hp.tau_sigma / s2 ** 2
        b = hp.tau_sigma / s2
        oracle = 0.0
        for level in (0, 1):
            ys = y[x == level]
            m = ys.size
            shift = m * hp.tau_mu / (2 * (hp.tau_mu + m)) * ys.mean() ** 2
            extra = shift + 0.5 * float(((ys - ys.mean()) ** 2).sum())
            oracle += sum(math.log(a + i) for i in range(m // 2))
            oracle += -a * math.log1p(extra / b) - m / 2 * math.log(b + extra)
            oracle += 0.5 * (math.log(hp.tau_mu) - math.log(hp.tau_mu + m))
            oracle += m / 2 * math.log(s2) + float((ys ** 2).sum()) / (2 * s2)
        assert exact == pytest.approx(oracle, abs=1e-8)

    def test_label_permutation_invariance(self):
        y, x, draw = _random_instance(7, n=40, k=2, d=2)
        hp = default_hyperparams(2)
        swapped = draw.permuted([1, 0])
        original = accumulate_suff_stats(y, x, draw.allocations, 2, 2)
        relabeled = accumulate_suff_stats(y, x, swapped.allocations, 2, 2)
        assert float(log_bf12(relabeled, swapped, None, hp)) == pytest.approx(
            float(log_bf12(original, draw, None, hp)), abs=1e-10)
        assert float(log_bf11(relabeled, swapped.weights, hp)) == pytest.approx(
            float(log_bf11(original, draw.weights, hp)), abs=1e-10)

    def test_tiny_variance_flagged(self):
        draw = MixtureDraw([0.5, 0.5], [0.0, 1.0], [1e-12, 1.0], [0, 1])
        assert warn_tiny_variances(draw, 1.0)
        assert not warn_tiny_variances(draw.permuted([1, 0]), 1e-6)


class TestRisingFactorial:

    @pytest.mark.parametrize("a", [0.5, 3.0, 40.0])
    @pytest.mark.parametrize("m", [0.5, 2.0, 7.5])
    def test_matches_gamma_ratio(self, a, m):
        expected = math.lgamma(a + m) - math.lgamma(a)
        assert float(log_rising_factorial(a, m)) == pytest.approx(expected, rel=1e-12, abs=1e-13)

    def test_zero_length(self):
        np.testing.assert_array_equal(log_rising_factorial([2.0, 1e15], [0.0, 0.0]), [0.0, 0.0])

    def test_huge_shape(self):
        a = 5e13
        expected = sum(math.log(a + i) for i in range(3))
        assert float(log_rising_factorial(a, 3.0)) == pytest.approx(expected, rel=1e-13)


class TestTriple:

    def test_zero(self):
        triple = make_triple(0.0, 0.0)
        assert (triple.log_bf11, triple.log_bf12, triple.log_bf13) == (0.0, 0.0, 0.0)

    def test_additive(self):
        assert make_triple(math.log(2), math.log(3)).log_bf13 == pytest.approx(math.log(6), abs=1e-15)

    def test_identity_exact(self):
        rng = make_generator(8)
        for a, b in rng.normal(scale=50, size=(100, 2)):
            triple = make_triple(a, b)
            assert triple.log_bf13 == triple.log_bf11 + triple.log_bf12

    def test_rejects_nonfinite(self):
        with pytest.raises(NumericError):
            make_triple(float('inf'), 0.0)


class TestPosteriorProbs:

    def test_prior_certainty(self):
        probs = posterior_probs(make_triple(5.0, 5.0), (1.0, 0.0, 0.0, 0.0))
        assert probs.p0 == pytest.approx(1.0)

    def test_unit_bayes_factors_return_prior(self):
        probs = posterior_probs(make_triple(0.0, 0.0), PRIOR_KAPPA)
        np.testing.assert_allclose(probs.as_array(), PRIOR_KAPPA, atol=1e-15)

    def test_hand_computed(self):
        probs = posterior_probs(make_triple(math.log(3), 0.0), PRIOR_KAPPA)
        np.testing.assert_allclose(probs.as_array(), [0.3, 0.3, 0.1, 0.3], atol=1e-12)

    def test_extreme_log_bayes_factors(self):
        probs = posterior_probs(make_triple(-800.0, -900.0), PRIOR_KAPPA)
        assert probs.p0 == pytest.approx(1.0)
        probs = posterior_probs(make_triple(800.0, 900.0), PRIOR_KAPPA)
        assert probs.p13 == pytest.approx(1.0)

    @pytest.mark.parametrize("log_bf12_value", [-5.0, 0.0, 3.0])
    def test_null_probability_falls_as_weight_evidence_grows(self, log_bf12_value):
        grid = np.linspace(-20.0, 20.0, 81)
        p0 = [posterior_probs(make_triple(v, log_bf12_value), PRIOR_KAPPA).p0 for v in grid]
        assert np.all(np.diff(p0) < 0)
        p13 = [posterior_probs(make_triple(v, log_bf12_value), PRIOR_KAPPA).p13 for v in grid]
        assert np.all(np.diff(p13) > 0)

    def test_dominant_alternative(self):
        assert dominant_alternative([0.1, 0.2, 0.6, 0.1]) == 'kernel'
        assert dominant_alternative(posterior_probs(make_triple(math.log(3), 0.0), PRIOR_KAPPA)) == 'weights'


class TestBayesFactorNode:

    def test_direct_path_matches_block_path(self):
        rng = make_generator(9)
        n, p, k = 30, 4, 2
        x = rng.integers(0, 3, size=(n, p))
        x[:3] = [[0, 0, 0, 0], [1, 1, 1, 1], [2, 2, 2, 2]]
        dataset = Dataset(y=rng.normal(size=n), x=x, levels=np.full(p, 3))
        draw = MixtureDraw([0.4, 0.6], [-0.5, 0.5], [1.0, 1.5], rng.integers(0, k, size=n))
        hp = default_hyperparams(k)

        block = accumulate_block_stats(dataset.y, dataset.x, draw.allocations, k, 3)
        l11 = log_bf11(block, draw.weights, hp)
        l12 = log_bf12(block, draw, None, hp)
        node = BayesFactorNode()
        for j in range(p):
            triple = node.predictor_triple(dataset, j, draw, hp)
            assert triple.log_bf11 == pytest.approx(l11[j], abs=1e-10)
            assert triple.log_bf12 == pytest.approx(l12[j], abs=1e-10)

    def test_predictor_probs_sum_to_one(self):
        rng = make_generator(10)
        dataset = Dataset(y=rng.normal(size=20), x=np.tile([[0], [1]], (10, 1)), levels=[2])
        draws = [MixtureDraw([1.0], [0.0], [1.0], np.zeros(20, dtype=int)) for _ in range(3)]
        probs = BayesFactorNode().predictor_probs(dataset, 0, draws, Hyperparams(k=1))
        assert probs.as_array().sum() == pytest.approx(1.0)


class TestStatsBlockWidth:

    def test_large_n_falls_back_to_single_predictor(self):
        assert stats_block_width(1_000_000) == 1

    def test_small_n_keeps_wide_blocks(self):
        assert stats_block_width(200) >= 256

    def test_explicit_budget(self):
        assert stats_block_width(100, budget=48 * 100 * 7) == 7
        assert stats_block_width(100, budget=1) == 1
