"""Tests for default hyperparameters and the prior signal-to-noise estimate."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from core_model import Hyperparams
from nodes.hyperparam_tuner_node import (
    HyperparamTunerNode,
    default_hyperparams,
    estimate_snr,
    gauss_l2_inner,
    mixture_l2_sq,
    prior_distances,
    sample_prior_phi,
)
from utils.errors import InvalidArgumentError
from utils.scheduler import make_generator


def _mixture_pdf(t, mix):
    weights, means, variances = (np.asarray(v) for v in mix)
    return (weights * stats.norm.pdf(t[:, None], means, np.sqrt(variances))).sum(axis=1)


class TestDefaultHyperparams:

    @pytest.mark.parametrize("k,expected", [(1, 1.0), (3, 21.19615), (7, 66.52026)])
    def test_tau_omega(self, k, expected):
        assert default_hyperparams(k).tau_omega == pytest.approx(expected, abs=1e-5)

    def test_base_prior(self):
        hp = default_hyperparams(3)
        assert (hp.mu0, hp.alpha, hp.a, hp.b, hp.q) == (0.0, 3.0, 2.0, 0.02, 50.0)
        assert (hp.tau_mu, hp.tau_sigma, hp.k) == (50.0, 50.0, 3)

    def test_rejects_zero_components(self):
        with pytest.raises(InvalidArgumentError):
            default_hyperparams(0)


class TestGaussInnerProduct:

    def test_standard_case(self):
        assert gauss_l2_inner(0.0, 0.5, 0.0, 0.5) == pytest.approx(0.3989423, abs=1e-7)

    @pytest.mark.parametrize("m,v", [(0.0, 1.0), (2.5, 0.3)])
    def test_square_integral(self, m, v):
        assert gauss_l2_inner(m, v, m, v) == pytest.approx(1 / (2 * math.sqrt(math.pi * v)), rel=1e-12)

    def test_far_apart(self):
        assert gauss_l2_inner(0.0, 1.0, 10.0, 1.0) == pytest.approx(stats.norm.pdf(10.0, 0.0, math.sqrt(2.0)),
                                                                     rel=1e-10)

    def test_matches_quadrature(self):
        value, _ = integrate.quad(lambda t: stats.norm.pdf(t, 0.3, 1.2) * stats.norm.pdf(t, -0.4, 0.7),
                                  -30, 30)
        assert gauss_l2_inner(0.3, 1.44, -0.4, 0.49) == pytest.approx(value, rel=1e-8)


class TestMixtureL2:

    def test_identical(self):
        mix = ([0.2, 0.8], [0.0, 1.0], [1.0, 0.5])
        assert mixture_l2_sq(mix, mix) == pytest.approx(0.0, abs=1e-15)

    def test_shifted_singletons(self):
        m = 2.0
        value = mixture_l2_sq(([1.0], [0.0], [1.0]), ([1.0], [m], [1.0]))
        assert value == pytest.approx((1 - math.exp(-m * m / 4)) / math.sqrt(math.pi), rel=1e-12)
        assert value == pytest.approx(0.356634, abs=1e-6)

    def test_matches_trapezoid(self):
        rng = make_generator(1)
        mix_a = (rng.dirichlet(np.ones(3)), rng.normal(size=3), rng.uniform(0.3, 2.0, 3))
        mix_b = (rng.dirichlet(np.ones(3)), rng.normal(size=3), rng.uniform(0.3, 2.0, 3))
        t = np.linspace(-50.0, 50.0, 400_001)
        oracle = integrate.trapezoid((_mixture_pdf(t, mix_a) - _mixture_pdf(t, mix_b)) ** 2, t)
        assert mixture_l2_sq(mix_a, mix_b) == pytest.approx(oracle, abs=1e-8)

    def test_rejects_bad_variance(self):
        with pytest.raises(InvalidArgumentError):
            mixture_l2_sq(([1.0], [0.0], [0.0]), ([1.0], [0.0], [1.0]))


class TestPriorDraws:

    def test_shapes(self):
        hp = default_hyperparams(3)
        phi = sample_prior_phi(hp, make_generator(2))
        for array in (phi.weights, phi.means, phi.variances,
                      phi.level_weights, phi.level_means, phi.level_variances):
            assert array.shape == (3,)
        assert phi.weights.sum() == pytest.approx(1.0)
        assert phi.level_weights.sum() == pytest.approx(1.0)
        assert np.all(phi.variances > 0) and np.all(phi.level_variances > 0)

    def test_distances_nonnegative(self):
        hp = default_hyperparams(2)
        rng = make_generator(3)
        for _ in range(50):
            d0, d1 = prior_distances(sample_prior_phi(hp, rng), hp)
            assert d0 >= 0 and d1 >= 0


class TestEstimateSnr:

    def test_single_draw_reproducible(self):
        hp = default_hyperparams(3)
        first = estimate_snr(hp, mc_draws=1, seed=4)
        second = estimate_snr(hp, mc_draws=1, seed=4)
        assert (first.delta0, first.delta1) == (second.delta0, second.delta1)
        assert first.delta0 >= 0 and first.delta1 >= 0
        assert math.isnan(first.mc_stderr_ratio)

    def test_worker_count_does_not_change_estimate(self):
        hp = default_hyperparams(3)
        serial = estimate_snr(hp, mc_draws=600, seed=5, threads=1)
        threaded = estimate_snr(hp, mc_draws=600, seed=5, threads=3)
        assert serial == threaded

    def test_larger_precisions_lower_ratio(self):
        hp = default_hyperparams(3)
        base = estimate_snr(hp, mc_draws=500, seed=6)
        tight = estimate_snr(hp.scaled_precisions(100.0), mc_draws=500, seed=6)
        assert tight.ratio < base.ratio

    def test_rejects_zero_draws(self):
        with pytest.raises(InvalidArgumentError):
            estimate_snr(Hyperparams(), mc_draws=0)

    def test_node_sweep(self):
        hp = default_hyperparams(2)
        sweep = HyperparamTunerNode().precision_sweep(hp, [1.0, 10.0], mc_draws=100, seed=7)
        assert [factor for factor, _ in sweep] == [1.0, 10.0]
        assert all(estimate.mc_draws == 100 for _, estimate in sweep)
