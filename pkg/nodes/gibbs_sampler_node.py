"""
Gibbs Sampler Node - stage-one MCMC for the over-fitted Gaussian mixture baseline

The response is modelled as sum_h w_h N(y | mu_h, s2_h) with
w ~ Dir(alpha/k, ..., alpha/k) and (mu_h, s2_h) ~ N(mu0, q s2_h) IGa(a, b).
Each sweep draws allocations, then component parameters, then weights from
their full conditionals. Label switching is left alone: everything computed
from the draws downstream is invariant to relabeling.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from config import Config
from core_model import LOG_2PI, Hyperparams, MixtureDraw, _log_component_mass, _normalize_log_mass
from utils.errors import ChainFailureError, InvalidArgumentError
from utils.logger import log_chain_progress, log_error, setup_logger
from utils.scheduler import ChunkScheduler, make_generator

logger = setup_logger()

VARIANCE_FLOOR = 1e-300


@dataclass(frozen=True)
class ChainConfig:
    """Iteration schedule; burn_in defaults to total_iters - keep * thin"""

    total_iters: int = 6000
    burn_in: Optional[int] = None
    keep: int = 500
    seed: int = 2024
    thin: int = 1

    def __post_init__(self):
        if self.total_iters < 1 or self.keep < 1 or self.thin < 1:
            raise InvalidArgumentError("total_iters, keep and thin must be positive")
        burn_in = self.total_iters - self.keep * self.thin if self.burn_in is None else self.burn_in
        if burn_in < 0 or burn_in >= self.total_iters:
            raise InvalidArgumentError(f"burn_in must lie in [0, total_iters) (got {burn_in})")
        if self.keep > self.total_iters - burn_in:
            raise InvalidArgumentError("keep exceeds the post-burn-in iterations")
        if burn_in + self.keep * self.thin > self.total_iters:
            raise InvalidArgumentError("burn_in + keep * thin exceeds total_iters")
        object.__setattr__(self, 'burn_in', int(burn_in))

    @classmethod
    def from_config(cls, seed: Optional[int] = None) -> 'ChainConfig':
        chain = Config.CHAIN_CONFIG
        return cls(
            total_iters=chain['total_iters'],
            burn_in=chain['burn_in'],
            keep=chain['keep'],
            seed=Config.SEED if seed is None else seed,
            thin=chain['thin'],
        )

    def retained_iterations(self) -> np.ndarray:
        """1-based sweep indices whose state is kept: the last keep sweeps at thin spacing"""
        offsets = np.arange(self.keep - 1, -1, -1) * self.thin
        return self.total_iters - offsets


@dataclass(frozen=True, eq=False)
class ChainOutput:
    """Retained draws plus the log joint density of every sweep"""

    draws: Tuple[MixtureDraw, ...]
    diagnostics: np.ndarray

    def __post_init__(self):
        draws = tuple(self.draws)
        if not draws:
            raise InvalidArgumentError("a chain needs at least one retained draw")
        k, n = draws[0].k, draws[0].n
        if any(d.k != k or d.n != n for d in draws):
            raise InvalidArgumentError("all draws must share k and n")
        object.__setattr__(self, 'draws', draws)
        object.__setattr__(self, 'diagnostics', np.asarray(self.diagnostics, dtype=np.float64))

    @property
    def n_draws(self) -> int:
        return len(self.draws)

    @property
    def k(self) -> int:
        return self.draws[0].k

    @property
    def n(self) -> int:
        return self.draws[0].n

    def stacked(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(weights, means, variances) as S x k arrays and allocations as S x n"""
        return (
            np.stack([d.weights for d in self.draws]),
            np.stack([d.means for d in self.draws]),
            np.stack([d.variances for d in self.draws]),
            np.stack([d.allocations for d in self.draws]),
        )


def sample_log_gamma(shape: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """log of Gamma(shape, 1) variates; exact for tiny shapes via Gamma(a+1) U^(1/a)"""
    shape = np.asarray(shape, dtype=np.float64)
    boosted = rng.standard_gamma(shape + 1.0)
    uniforms = rng.random(shape.shape)
    with np.errstate(divide='ignore'):
        return np.log(boosted) + np.log1p(-uniforms) / shape


def sample_dirichlet(concentration: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draw normalized in log space so tiny concentrations never give 0/0"""
    log_g = sample_log_gamma(concentration, rng)
    weights = np.exp(log_g - logsumexp(log_g, axis=-1, keepdims=True))
    return weights / weights.sum(axis=-1, keepdims=True)


def sample_inverse_gamma(shape: np.ndarray, rate: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """IGa(shape, rate) as rate over a Gamma(shape, 1) variate, floored away from zero"""
    return np.maximum(np.asarray(rate) / rng.standard_gamma(shape), VARIANCE_FLOOR)


def initial_draw(y: np.ndarray, k: int) -> MixtureDraw:
    """Deterministic start: quantile bins of y, bin moments, uniform weights"""
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    overall_var = float(y.var())
    floor = 1e-6 * overall_var if overall_var > 0 else 1e-6

    ranks = np.empty(n, dtype=np.int64)
    ranks[np.argsort(y, kind='stable')] = np.arange(n)
    allocations = (ranks * k) // n

    counts = np.bincount(allocations, minlength=k)
    sums = np.bincount(allocations, weights=y, minlength=k)
    means = np.where(counts > 0, sums / np.maximum(counts, 1), y.mean())
    centered = np.bincount(allocations, weights=(y - means[allocations]) ** 2, minlength=k)
    variances = np.where(counts > 0, centered / np.maximum(counts, 1), overall_var)
    variances = np.maximum(variances, floor)

    return MixtureDraw(
        weights=np.full(k, 1.0 / k),
        means=means,
        variances=variances,
        allocations=allocations,
    )


def sample_allocations(y: np.ndarray, draw: MixtureDraw, rng: np.random.Generator) -> np.ndarray:
    """Independent categorical draw of each c_i from its allocation probabilities"""
    y = np.asarray(y, dtype=np.float64)
    probs = _normalize_log_mass(_log_component_mass(y, draw.weights, draw.means, draw.variances))
    cumulative = np.cumsum(probs, axis=1)
    uniforms = rng.random(y.size)
    allocations = np.count_nonzero(cumulative <= uniforms[:, None], axis=1)
    return np.minimum(allocations, draw.k - 1)


def component_posterior(y: np.ndarray, allocations: np.ndarray,
                        hp: Hyperparams) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Normal-inverse-gamma full-conditional parameters (q_hat, mu_hat, a_hat, b_hat) per component"""
    y = np.asarray(y, dtype=np.float64)
    allocations = np.asarray(allocations, dtype=np.int64)
    counts = np.bincount(allocations, minlength=hp.k).astype(np.float64)
    sums = np.bincount(allocations, weights=y, minlength=hp.k)
    ybar = np.where(counts > 0, sums / np.maximum(counts, 1.0), 0.0)
    centered = np.bincount(allocations, weights=(y - ybar[allocations]) ** 2, minlength=hp.k)

    q_hat = 1.0 / (1.0 / hp.q + counts)
    mu_hat = q_hat * (hp.mu0 / hp.q + counts * ybar)
    a_hat = hp.a + counts / 2.0
    shrink = counts / (1.0 + hp.q * counts)
    b_hat = hp.b + 0.5 * (centered + shrink * (ybar - hp.mu0) ** 2)
    return q_hat, mu_hat, a_hat, b_hat


def sample_components(y: np.ndarray, allocations: np.ndarray, hp: Hyperparams,
                      rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Draw s2_h ~ IGa(a_hat, b_hat) then mu_h ~ N(mu_hat, q_hat s2_h)"""
    q_hat, mu_hat, a_hat, b_hat = component_posterior(y, allocations, hp)
    variances = sample_inverse_gamma(a_hat, b_hat, rng)
    means = mu_hat + np.sqrt(q_hat * variances) * rng.standard_normal(hp.k)
    return means, variances


def sample_weights(allocations: np.ndarray, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """Draw from Dir(alpha/k + n_1, ..., alpha/k + n_k)"""
    counts = np.bincount(np.asarray(allocations, dtype=np.int64), minlength=hp.k)
    return sample_dirichlet(hp.alpha / hp.k + counts, rng)


def log_joint(y: np.ndarray, draw: MixtureDraw, hp: Hyperparams) -> float:
    """log p(y, c, w, mu, s2) under the baseline model"""
    y = np.asarray(y, dtype=np.float64)
    c = draw.allocations
    mu, s2 = draw.means, draw.variances
    weights = np.maximum(draw.weights, 1e-300)
    counts = draw.component_counts()
    conc = hp.alpha / hp.k

    log_lik = -0.5 * np.sum(LOG_2PI + np.log(s2[c]) + (y - mu[c]) ** 2 / s2[c])
    log_alloc = np.sum(xlogy(counts, weights))
    log_dir = gammaln(hp.alpha) - hp.k * gammaln(conc) + np.sum((conc - 1.0) * np.log(weights))
    log_mean_prior = -0.5 * np.sum(LOG_2PI + np.log(hp.q * s2) + (mu - hp.mu0) ** 2 / (hp.q * s2))
    log_var_prior = np.sum(hp.a * math.log(hp.b) - gammaln(hp.a) - (hp.a + 1.0) * np.log(s2) - hp.b / s2)
    return float(log_lik + log_alloc + log_dir + log_mean_prior + log_var_prior)


def run_chain(y: np.ndarray, hp: Hyperparams, cfg: ChainConfig, chain_index: int = 0) -> ChainOutput:
    """Run one Gibbs chain and keep the configured draws"""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size < 1 or not np.all(np.isfinite(y)):
        raise InvalidArgumentError("y must be a non-empty finite vector")

    rng = make_generator(cfg.seed, chain_index)
    state = initial_draw(y, hp.k)

    retained = set(cfg.retained_iterations().tolist())
    log_every = max(1, Config.CHAIN_CONFIG['log_every'])
    draws: List[MixtureDraw] = []
    trace = np.empty(cfg.total_iters)

    for iteration in range(1, cfg.total_iters + 1):
        allocations = sample_allocations(y, state, rng)
        means, variances = sample_components(y, allocations, hp, rng)
        weights = sample_weights(allocations, hp, rng)

        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances))
                and np.all(np.isfinite(weights))):
            raise ChainFailureError("non-finite component parameters or weights", iteration)
        try:
            state = MixtureDraw(weights, means, variances, allocations)
        except InvalidArgumentError as e:
            raise ChainFailureError(str(e), iteration) from e

        trace[iteration - 1] = log_joint(y, state, hp)
        if not math.isfinite(trace[iteration - 1]):
            raise ChainFailureError("log joint density is not finite", iteration)
        if iteration in retained:
            draws.append(state)
        if iteration % log_every == 0:
            log_chain_progress(logger, iteration, cfg.total_iters, trace[iteration - 1])

    return ChainOutput(draws=tuple(draws), diagnostics=trace)


def run_chains(y: np.ndarray, hp: Hyperparams, cfg: ChainConfig, n_chains: int = 1,
               threads: int = 1) -> ChainOutput:
    """Independent chains on separate streams; draws pooled in chain order"""
    if n_chains < 1:
        raise InvalidArgumentError(f"n_chains must be >= 1 (got {n_chains})")
    if n_chains == 1:
        return run_chain(y, hp, cfg)
    scheduler = ChunkScheduler(threads=threads, chunk_size=1)
    outputs = scheduler.map(lambda index: run_chain(y, hp, cfg, chain_index=index), range(n_chains))
    return ChainOutput(
        draws=tuple(d for out in outputs for d in out.draws),
        diagnostics=np.concatenate([out.diagnostics for out in outputs]),
    )


class GibbsSamplerNode:
    """Node fitting the baseline mixture to the marginal response"""

    def __init__(self):
        self.config = Config()
        logger.debug("Gibbs Sampler Node initialized")

    def fit_baseline(self, y: Sequence[float], hp: Hyperparams, cfg: ChainConfig,
                     n_chains: int = 1, threads: int = 1) -> ChainOutput:
        """Fit the baseline mixture and return the retained draws"""
        try:
            logger.info(
                f"Fitting baseline mixture: n={len(y)}, k={hp.k}, {cfg.total_iters} sweeps, "
                f"keeping {cfg.keep} (thin {cfg.thin}), {n_chains} chain(s), seed {cfg.seed}"
            )
            chain = run_chains(np.asarray(y, dtype=np.float64), hp, cfg, n_chains, threads)
            occupied = np.mean([np.count_nonzero(d.component_counts()) for d in chain.draws])
            logger.info(
                f"Baseline fitted: {chain.n_draws} draws, mean occupied components {occupied:.2f}, "
                f"final log joint {chain.diagnostics[-1]:.3f}"
            )
            return chain
        except ChainFailureError as e:
            log_error(logger, "Chain failure", str(e), f"seed={cfg.seed}")
            raise
