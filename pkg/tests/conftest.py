"""Shared fixtures: small random datasets and synthetic chains."""

import numpy as np
import pytest

from core_model import Dataset, MixtureDraw
from nodes.gibbs_sampler_node import ChainOutput
from utils.scheduler import make_generator


def random_chain(n, k, n_draws, seed):
    """Chain of independent random draws (not a Gibbs run)"""
    rng = make_generator(seed)
    draws = tuple(
        MixtureDraw(
            weights=rng.dirichlet(np.ones(k)),
            means=rng.normal(size=k),
            variances=rng.uniform(0.5, 2.0, size=k),
            allocations=rng.integers(0, k, size=n),
        )
        for _ in range(n_draws)
    )
    return ChainOutput(draws=draws, diagnostics=np.zeros(n_draws))


def random_dataset(n, p, seed, levels=2):
    rng = make_generator(seed)
    x = rng.integers(0, levels, size=(n, p))
    x[:levels] = np.arange(levels)[:, None]
    return Dataset(y=rng.normal(size=n), x=x, levels=np.full(p, levels))


@pytest.fixture
def small_instance():
    """n=60, p=10, k=2, S=5"""
    return random_dataset(60, 10, seed=31), random_chain(60, 2, 5, seed=32)
