"""Tests for the Bayes factor cache, the kappa iteration and the selection rule."""

import os

import numpy as np
import pytest

from config import Config
from core_model import Dataset
from nodes.bayes_factor_node import BayesFactorNode, posterior_prob_array
from nodes.gibbs_sampler_node import ChainOutput
from nodes.hyperparam_tuner_node import default_hyperparams
from nodes.screening_node import (
    BFCache,
    ScreeningNode,
    compute_bf_cache,
    kappa_fixed_point,
    kappa_step,
    screen,
    select_top,
    selection_report,
)
from utils.errors import InvalidArgumentError
from utils.scheduler import ChunkScheduler, make_generator
from tests.conftest import random_chain, random_dataset

PRIOR_KAPPA = (0.5, 1 / 6, 1 / 6, 1 / 6)
PERMUTATION_SEEDS = [1, 2] + [pytest.param(seed, marks=pytest.mark.slow) for seed in range(100, 118)]


def _cache_from(log_bfs, degenerate=None):
    """BFCache holding a given p x S x 2 array"""
    log_bfs = np.asarray(log_bfs, dtype=np.float64)
    p, s, _ = log_bfs.shape
    degenerate = np.zeros(p, dtype=bool) if degenerate is None else degenerate
    cache = BFCache(p, s, chunk_size=2, degenerate=degenerate)
    for start, stop in cache.chunks:
        cache.store(start, log_bfs[start:stop])
    return cache


def _reference_kappa_step(l11, l12, kappa):
    """Plain loop over predictors and draws"""
    p, s = l11.shape
    total = np.zeros(4)
    for j in range(p):
        acc = np.zeros(4)
        for t in range(s):
            mass = np.array(kappa) * np.exp([0.0, l11[j, t], l12[j, t], l11[j, t] + l12[j, t]])
            acc += mass / mass.sum()
        total += acc / s
    return total / p


class TestBFCache:

    def test_single_predictor_single_draw(self):
        dataset = random_dataset(20, 1, seed=1)
        chain = random_chain(20, 2, 1, seed=2)
        hp = default_hyperparams(2)
        with compute_bf_cache(dataset, chain, hp) as cache:
            l11, l12 = cache.log_bf_arrays()
        triple = BayesFactorNode().predictor_triple(dataset, 0, chain.draws[0], hp)
        assert l11[0, 0] == pytest.approx(triple.log_bf11, abs=1e-10)
        assert l12[0, 0] == pytest.approx(triple.log_bf12, abs=1e-10)

    def test_duplicated_columns(self):
        base = random_dataset(40, 3, seed=3)
        x = np.column_stack([base.x, base.x[:, 1]])
        dataset = Dataset(y=base.y, x=x, levels=np.full(4, 2))
        with compute_bf_cache(dataset, random_chain(40, 3, 4, seed=4), default_hyperparams(3)) as cache:
            l11, l12 = cache.log_bf_arrays()
        np.testing.assert_array_equal(l11[1], l11[3])
        np.testing.assert_array_equal(l12[1], l12[3])

    def test_matches_naive_path(self, small_instance):
        dataset, chain = small_instance
        hp = default_hyperparams(2)
        node = BayesFactorNode()
        scheduler = ChunkScheduler(threads=2, chunk_size=3)
        with compute_bf_cache(dataset, chain, hp, scheduler) as cache:
            l11, l12 = cache.log_bf_arrays()
        for j in range(dataset.p):
            for s, draw in enumerate(chain.draws):
                triple = node.predictor_triple(dataset, j, draw, hp)
                assert l11[j, s] == pytest.approx(triple.log_bf11, abs=1e-10)
                assert l12[j, s] == pytest.approx(triple.log_bf12, abs=1e-10)

    def test_spilled_cache_matches_memory(self, small_instance, tmp_path):
        dataset, chain = small_instance
        hp = default_hyperparams(2)
        scheduler = ChunkScheduler(threads=2, chunk_size=4)
        with compute_bf_cache(dataset, chain, hp, scheduler) as cache:
            expected = cache.log_bf_arrays()
        with compute_bf_cache(dataset, chain, hp, scheduler, mem_budget=0, spill_dir=str(tmp_path)) as cache:
            assert cache.spilled
            spill_path = cache.spill_path
            spilled = cache.log_bf_arrays()
        assert not os.path.exists(spill_path)
        np.testing.assert_array_equal(spilled[0], expected[0])
        np.testing.assert_array_equal(spilled[1], expected[1])

    def test_rejects_mismatched_chain(self, small_instance):
        dataset, _ = small_instance
        with pytest.raises(InvalidArgumentError):
            compute_bf_cache(dataset, random_chain(59, 2, 2, seed=5), default_hyperparams(2))


class TestKappaIteration:

    def test_unit_bayes_factors_keep_prior(self):
        with _cache_from(np.zeros((1, 1, 2))) as cache:
            kappa, iterations, converged = kappa_fixed_point(cache, PRIOR_KAPPA)
        np.testing.assert_allclose(kappa, PRIOR_KAPPA, atol=1e-15)
        assert (iterations, converged) == (1, True)

    def test_unanimous_null_evidence(self):
        with _cache_from(np.full((5, 3, 2), -500.0)) as cache:
            kappa, _, converged = kappa_fixed_point(cache, PRIOR_KAPPA)
        assert converged
        assert kappa[0] == pytest.approx(1.0)
        assert np.all(kappa[1:] < 1e-12)

    def test_matches_reference_recurrence(self):
        log_bfs = np.array([[[2.0, -1.0]], [[-3.0, 0.5]], [[0.1, 4.0]]])
        kappa = np.array(PRIOR_KAPPA)
        with _cache_from(log_bfs) as cache:
            for _ in range(20):
                expected = _reference_kappa_step(log_bfs[..., 0], log_bfs[..., 1], kappa)
                kappa = kappa_step(cache, kappa)
                np.testing.assert_allclose(kappa, expected, atol=1e-12)

    def test_zero_iterations(self):
        with _cache_from(np.ones((2, 2, 2))) as cache:
            kappa, iterations, converged = kappa_fixed_point(cache, PRIOR_KAPPA, max_iter=0)
        np.testing.assert_array_equal(kappa, PRIOR_KAPPA)
        assert (iterations, converged) == (0, False)

    def test_degenerate_predictors_excluded(self):
        log_bfs = np.array([[[0.0, 0.0]], [[50.0, 50.0]]])
        with _cache_from(log_bfs, degenerate=np.array([True, False])) as cache:
            kappa = kappa_step(cache, PRIOR_KAPPA)
        np.testing.assert_allclose(kappa, posterior_prob_array(50.0, 50.0, PRIOR_KAPPA), atol=1e-15)

    def test_independent_of_worker_count(self):
        rng = np.random.default_rng(6)
        log_bfs = rng.normal(scale=3.0, size=(37, 4, 2))
        results = []
        for threads in (1, 3, 8):
            with _cache_from(log_bfs) as cache:
                results.append(kappa_fixed_point(cache, PRIOR_KAPPA, scheduler=ChunkScheduler(threads, 2)))
        for kappa, iterations, _ in results[1:]:
            np.testing.assert_array_equal(kappa, results[0][0])
            assert iterations == results[0][1]


class TestScreen:

    def test_probabilities_on_simplex(self, small_instance):
        dataset, chain = small_instance
        result = screen(dataset, chain, default_hyperparams(2))
        assert result.probs.shape == (10, 4)
        np.testing.assert_allclose(result.probs.sum(axis=1), 1.0, atol=1e-12)
        assert sum(result.kappa) == pytest.approx(1.0)
        assert result.hypothesis_probs(0).p0 == pytest.approx(result.pi0[0])

    def test_threads_do_not_change_results(self):
        dataset = random_dataset(200, 500, seed=7)
        chain = random_chain(200, 3, 4, seed=8)
        hp = default_hyperparams(3)
        serial = screen(dataset, chain, hp, threads=1, chunk_size=64)
        threaded = screen(dataset, chain, hp, threads=8, chunk_size=64)
        np.testing.assert_allclose(threaded.pi0, serial.pi0, atol=1e-12, rtol=0)
        assert threaded.kappa == serial.kappa

    def test_stats_sub_blocks_match_full_width(self, monkeypatch):
        dataset = random_dataset(50, 23, seed=11, levels=3)
        chain = random_chain(50, 3, 4, seed=12)
        hp = default_hyperparams(3)
        scheduler = ChunkScheduler(threads=1, chunk_size=16)
        with compute_bf_cache(dataset, chain, hp, scheduler) as cache:
            expected = cache.log_bf_arrays()
        monkeypatch.setitem(Config.SCREENING_CONFIG, 'stats_block_bytes', 1)
        with compute_bf_cache(dataset, chain, hp, scheduler) as cache:
            narrow = cache.log_bf_arrays()
        np.testing.assert_allclose(narrow[0], expected[0], atol=1e-12, rtol=0)
        np.testing.assert_allclose(narrow[1], expected[1], atol=1e-12, rtol=0)

    @pytest.mark.parametrize("seed", PERMUTATION_SEEDS)
    def test_component_relabeling_leaves_probabilities_unchanged(self, seed):
        rng = make_generator(seed)
        dataset = random_dataset(60, 8, seed=seed, levels=3)
        chain = random_chain(60, 3, 4, seed=seed + 1000)
        hp = default_hyperparams(3)
        expected = screen(dataset, chain, hp)
        for _ in range(10):
            relabeled = ChainOutput(
                draws=tuple(draw.permuted(rng.permutation(3)) for draw in chain.draws),
                diagnostics=chain.diagnostics,
            )
            result = screen(dataset, relabeled, hp)
            np.testing.assert_allclose(result.pi0, expected.pi0, atol=1e-9, rtol=0)
            np.testing.assert_allclose(result.kappa, expected.kappa, atol=1e-9, rtol=0)

    def test_degenerate_predictor(self):
        base = random_dataset(30, 2, seed=9)
        x = np.column_stack([base.x, np.ones(30, dtype=int)])
        dataset = Dataset(y=base.y, x=x, levels=np.full(3, 2))
        result = screen(dataset, random_chain(30, 2, 3, seed=10), default_hyperparams(2))
        np.testing.assert_array_equal(result.degenerate, [False, False, True])
        np.testing.assert_array_equal(result.probs[2], [1.0, 0.0, 0.0, 0.0])

    def test_node_run(self, small_instance):
        dataset, chain = small_instance
        result = ScreeningNode().run(dataset, chain, default_hyperparams(2), threads=2, chunk_size=4)
        assert result.n_predictors == dataset.p
        assert result.iterations >= 1


class TestSelection:

    def test_all(self):
        np.testing.assert_array_equal(select_top([0.5, 0.1, 0.9], 3), [0, 1, 2])

    def test_argmin(self):
        np.testing.assert_array_equal(select_top([0.5, 0.1, 0.9], 1), [1])

    def test_ties_included(self):
        np.testing.assert_array_equal(select_top([0.1, 0.3, 0.3, 0.9], 2), [0, 1, 2])

    @pytest.mark.parametrize("d_n", [0, 4])
    def test_rejects_out_of_range(self, d_n):
        with pytest.raises(InvalidArgumentError):
            select_top([0.1, 0.2, 0.3], d_n)

    def test_report_order(self, small_instance):
        dataset, chain = small_instance
        result = screen(dataset, chain, default_hyperparams(2))
        rows = selection_report(result, 4)
        pi0 = [row['pi0'] for row in rows]
        assert pi0 == sorted(pi0)
        assert len(rows) >= 4
        assert {row['dominant'] for row in rows} <= {'weights', 'kernel', 'both'}
