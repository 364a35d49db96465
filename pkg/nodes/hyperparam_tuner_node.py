"""
Hyperparameter Tuner Node - defaults and the prior signal-to-noise check

Delta0 is the prior expected squared L2 distance between the baseline density
and the density of the component means; Delta1 is the expected squared L2
distance between the baseline density and a level-specific density. Both are
averages of closed-form Gaussian-mixture inner products over prior draws.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from config import Config
from core_model import DEFAULT_KAPPA, Hyperparams, _log_gauss
from nodes.bayes_factor_node import floor_weights
from nodes.gibbs_sampler_node import sample_dirichlet, sample_inverse_gamma
from utils.errors import InvalidArgumentError
from utils.logger import setup_logger
from utils.scheduler import ChunkScheduler, make_generator

logger = setup_logger()

Mixture = Tuple[Sequence[float], Sequence[float], Sequence[float]]


@dataclass(frozen=True)
class SnrEstimate:
    delta0: float
    delta1: float
    ratio: float
    mc_draws: int
    mc_stderr_ratio: float

    def within(self, low: float, high: float) -> bool:
        return low <= self.ratio <= high


@dataclass(frozen=True, eq=False)
class PriorPhi:
    """Baseline mixture and one level-specific mixture drawn from the priors"""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    level_weights: np.ndarray
    level_means: np.ndarray
    level_variances: np.ndarray


def default_hyperparams(k: int) -> Hyperparams:
    """Defaults: mu0=0, alpha=k, a=2, b=0.02, q=50, tau_mu=tau_sigma=50, tau_omega=k^1.5+8(k-1)"""
    if int(k) != k or k < 1:
        raise InvalidArgumentError(f"k must be a positive integer (got {k})")
    k = int(k)
    return Hyperparams(
        kappa=DEFAULT_KAPPA,
        tau_omega=k ** 1.5 + 8.0 * (k - 1),
        tau_mu=50.0,
        tau_sigma=50.0,
        mu0=0.0,
        q=50.0,
        a=2.0,
        b=0.02,
        alpha=float(k),
        k=k,
    )


def _gauss_inner(mu1, var1, mu2, var2):
    return np.exp(_log_gauss(mu1 - mu2, 0.0, var1 + var2))


def gauss_l2_inner(mu1: float, var1: float, mu2: float, var2: float) -> float:
    """Integral of N(t|mu1,var1) N(t|mu2,var2) dt = N(mu1 - mu2 | 0, var1 + var2)"""
    if not (var1 > 0 and var2 > 0):
        raise InvalidArgumentError(f"variances must be positive (got {var1}, {var2})")
    return float(_gauss_inner(mu1, var1, mu2, var2))


def _cross_term(mix_a: Mixture, mix_b: Mixture) -> float:
    wa, ma, va = (np.asarray(v, dtype=np.float64) for v in mix_a)
    wb, mb, vb = (np.asarray(v, dtype=np.float64) for v in mix_b)
    kernel = _gauss_inner(ma[:, None], va[:, None], mb[None, :], vb[None, :])
    return float(wa @ kernel @ wb)


def _check_l2_mixture(mix: Mixture) -> None:
    weights, means, variances = (np.asarray(v, dtype=np.float64) for v in mix)
    if not (weights.shape == means.shape == variances.shape) or weights.ndim != 1:
        raise InvalidArgumentError("mixture weights, means and variances must be equal-length vectors")
    if np.any(variances <= 0):
        raise InvalidArgumentError("mixture variances must be positive")


def mixture_l2_sq(mix_a: Mixture, mix_b: Mixture) -> float:
    """Squared L2 distance between two Gaussian mixtures, clamped at zero"""
    _check_l2_mixture(mix_a)
    _check_l2_mixture(mix_b)
    value = _cross_term(mix_a, mix_a) + _cross_term(mix_b, mix_b) - 2.0 * _cross_term(mix_a, mix_b)
    return max(value, 0.0)


def sample_prior_phi(hp: Hyperparams, rng: np.random.Generator) -> PriorPhi:
    """Draw the baseline from P0 and one level-specific mixture from the alternative priors"""
    k = hp.k
    weights = sample_dirichlet(np.full(k, hp.alpha / k), rng)
    variances = sample_inverse_gamma(np.full(k, hp.a), np.full(k, hp.b), rng)
    means = hp.mu0 + np.sqrt(hp.q * variances) * rng.standard_normal(k)

    level_weights = sample_dirichlet(hp.tau_omega * floor_weights(weights), rng)
    shape = hp.tau_sigma / variances ** 2
    rate = hp.tau_sigma / variances
    level_variances = sample_inverse_gamma(shape, rate, rng)
    level_means = means + np.sqrt(level_variances / hp.tau_mu) * rng.standard_normal(k)
    return PriorPhi(weights, means, variances, level_weights, level_means, level_variances)


def prior_distances(phi: PriorPhi, hp: Hyperparams) -> Tuple[float, float]:
    """(||f_y - f_mu||^2, ||f_y - f_{y|x=l}||^2) for one prior draw"""
    baseline = (phi.weights, phi.means, phi.variances)
    mean_density = (phi.weights, np.full(hp.k, hp.mu0), hp.q * phi.variances)
    level_density = (phi.level_weights, phi.level_means, phi.level_variances)
    return mixture_l2_sq(baseline, mean_density), mixture_l2_sq(baseline, level_density)


def estimate_snr(hp: Hyperparams, mc_draws: int = 5000, seed: int = 2024,
                 threads: int = 1) -> SnrEstimate:
    """Monte Carlo estimate of Delta0, Delta1 and Delta1/Delta0 under the priors"""
    if mc_draws < 1:
        raise InvalidArgumentError(f"mc_draws must be >= 1 (got {mc_draws})")
    block_size = Config.TUNER_CONFIG['block_size']
    scheduler = ChunkScheduler(threads=threads, chunk_size=block_size)

    def run_block(start: int, stop: int) -> np.ndarray:
        rng = make_generator(seed, start // block_size)
        return np.array([prior_distances(sample_prior_phi(hp, rng), hp) for _ in range(start, stop)])

    distances = np.concatenate(scheduler.map_chunks(run_block, mc_draws), axis=0)
    d0, d1 = distances[:, 0], distances[:, 1]
    delta0, delta1 = float(d0.mean()), float(d1.mean())
    ratio = delta1 / delta0 if delta0 > 0 else math.inf

    if mc_draws > 1 and delta0 > 0:
        cov = np.cov(d0, d1)
        ratio_var = (cov[1, 1] - 2.0 * ratio * cov[0, 1] + ratio ** 2 * cov[0, 0]) / (delta0 ** 2 * mc_draws)
        stderr = math.sqrt(max(ratio_var, 0.0))
    else:
        stderr = math.nan
    return SnrEstimate(delta0=delta0, delta1=delta1, ratio=ratio, mc_draws=mc_draws, mc_stderr_ratio=stderr)


class HyperparamTunerNode:
    """Node reporting the prior signal-to-noise ratio of a hyperparameter setting"""

    def __init__(self):
        self.config = Config()
        logger.debug("Hyperparameter Tuner Node initialized")

    def report(self, hp: Hyperparams, mc_draws: int = None, seed: int = None,
               threads: int = 1) -> SnrEstimate:
        """Estimate the SNR and say whether it sits in the target band (advisory only)"""
        mc_draws = mc_draws or self.config.TUNER_CONFIG['mc_draws']
        seed = self.config.SEED if seed is None else seed
        estimate = estimate_snr(hp, mc_draws, seed, threads)
        low, high = self.config.TUNER_CONFIG['target_ratio']
        message = (
            f"SNR: Delta0={estimate.delta0:.4g}, Delta1={estimate.delta1:.4g}, "
            f"ratio={estimate.ratio:.4f} +/- {estimate.mc_stderr_ratio:.4f} ({mc_draws} draws)"
        )
        if estimate.within(low, high):
            logger.info(message)
        else:
            logger.warning(f"{message}; outside the target band [{low}, {high}]")
        return estimate

    def precision_sweep(self, hp: Hyperparams, factors: Sequence[float], mc_draws: int = None,
                        seed: int = None, threads: int = 1) -> List[Tuple[float, SnrEstimate]]:
        """SNR with all three precisions scaled by each factor"""
        return [(factor, self.report(hp.scaled_precisions(factor), mc_draws, seed, threads))
                for factor in factors]
