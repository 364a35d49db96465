"""
Bayes Factor Node - closed-form conditional Bayes factors for one predictor given one baseline draw

For predictor j with levels l = 0..d_j-1 the three alternatives let the level
change the mixture weights (BF11), the kernel parameters (BF12) or both
(BF13 = BF11 * BF12). Everything is computed from per-(component, level)
counts, sums and sums of squares, so a predictor costs one O(n) pass plus
O(k d_j) closed-form terms.

Sufficient statistics carry a trailing (k, d) pair of axes and may have any
number of leading batch axes; every function here broadcasts over them.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from config import Config
from core_model import MISSING_CODE, Dataset, Hyperparams, HypothesisProbs, MixtureDraw
from utils.errors import InvalidArgumentError, NumericError
from utils.logger import setup_logger

logger = setup_logger()

HYPOTHESES = ('null', 'weights', 'kernel', 'both')
# bytes of temporaries per (subject, predictor) pair in accumulate_block_stats
STATS_BYTES_PER_ENTRY = 48


@dataclass(frozen=True, eq=False)
class LevelSuffStats:
    """Per (component h, level l) counts, response sums and sums of squares"""

    counts: np.ndarray
    sums: np.ndarray
    sumsq: np.ndarray

    @property
    def totals(self) -> np.ndarray:
        """n_jh summed over levels"""
        return self.counts.sum(axis=-1)

    @property
    def k(self) -> int:
        return self.counts.shape[-2]

    @property
    def d(self) -> int:
        return self.counts.shape[-1]

    def pooled(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-component (count, sum, sumsq) pooled over levels"""
        return self.counts.sum(axis=-1), self.sums.sum(axis=-1), self.sumsq.sum(axis=-1)


@dataclass(frozen=True)
class LogBFTriple:
    """log BF11 and log BF12; log BF13 is always their sum"""

    log_bf11: float
    log_bf12: float

    @property
    def log_bf13(self) -> float:
        return self.log_bf11 + self.log_bf12


def accumulate_block_stats(y: np.ndarray, x_block: np.ndarray, allocations: np.ndarray,
                           k: int, d: int) -> LevelSuffStats:
    """Cell statistics for every column of x_block at once, shape (m, k, d)

    Codes >= d (including the missing code) are left out of every cell.
    """
    y = np.asarray(y, dtype=np.float64)
    x_block = np.asarray(x_block)
    n, m = x_block.shape
    cell_base = (np.arange(m, dtype=np.int64)[None, :] * k + np.asarray(allocations, dtype=np.int64)[:, None]) * d
    valid = x_block < d
    index = (cell_base + x_block.astype(np.int64))[valid]
    y_cells = np.broadcast_to(y[:, None], (n, m))[valid]

    size = m * k * d
    counts = np.bincount(index, minlength=size).reshape(m, k, d)
    sums = np.bincount(index, weights=y_cells, minlength=size).reshape(m, k, d)
    sumsq = np.bincount(index, weights=y_cells * y_cells, minlength=size).reshape(m, k, d)
    return LevelSuffStats(counts=counts, sums=sums, sumsq=sumsq)


def stats_block_width(n: int, budget: Optional[int] = None) -> int:
    """Predictors per accumulate_block_stats call so its temporaries fit in budget bytes"""
    budget = Config.SCREENING_CONFIG['stats_block_bytes'] if budget is None else budget
    return max(1, int(budget // (STATS_BYTES_PER_ENTRY * max(int(n), 1))))


def accumulate_suff_stats(y: Sequence[float], x_j: Sequence[int], allocations: Sequence[int],
                          k: int, levels: Optional[int] = None) -> LevelSuffStats:
    """Cell statistics of one predictor, shape (k, d_j)"""
    y = np.asarray(y, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.int64)
    allocations = np.asarray(allocations, dtype=np.int64)
    if not (y.shape == x_j.shape == allocations.shape) or y.ndim != 1:
        raise InvalidArgumentError("y, x_j and allocations must be vectors of equal length")
    if levels is None:
        levels = max(2, int(x_j.max()) + 1) if x_j.size else 2
    if x_j.size and (x_j.min() < 0 or x_j.max() >= levels):
        raise InvalidArgumentError(f"predictor level outside 0..{levels - 1}")
    if allocations.size and (allocations.min() < 0 or allocations.max() >= k):
        raise InvalidArgumentError(f"allocation outside 0..{k - 1}")
    stats = accumulate_block_stats(y, x_j[:, None], allocations, k, levels)
    return LevelSuffStats(counts=stats.counts[0], sums=stats.sums[0], sumsq=stats.sumsq[0])


def floor_weights(weights: np.ndarray, floor: Optional[float] = None) -> np.ndarray:
    """Weights floored away from zero and renormalized"""
    floor = Config.SCREENING_CONFIG['weight_floor'] if floor is None else floor
    floored = np.maximum(np.asarray(weights, dtype=np.float64), floor)
    return floored / floored.sum()


def log_bf11(stats: LevelSuffStats, weights: np.ndarray, hp: Hyperparams) -> np.ndarray:
    """log BF for weights changing with the level (Dirichlet-multinomial marginal)"""
    w = floor_weights(weights)
    base = hp.tau_omega * w
    counts = stats.counts.astype(np.float64)

    log_beta_base = gammaln(base).sum() - gammaln(base.sum())
    log_beta_cells = (gammaln(counts + base[:, None]).sum(axis=-2)
                      - gammaln(counts.sum(axis=-2) + base.sum()))
    level_terms = (log_beta_cells - log_beta_base).sum(axis=-1)
    return level_terms - (stats.totals * np.log(w)).sum(axis=-1)


def log_rising_factorial(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    """log Gamma(a + m) - log Gamma(a), 0 where m == 0

    Evaluated as log Gamma(m) - log B(a, m), which stays accurate for a near 1e15
    (component variances near 1e-7).
    """
    a, m = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(m, dtype=np.float64))
    positive = m > 0
    safe_m = np.where(positive, m, 1.0)
    return np.where(positive, gammaln(safe_m) - betaln(a, safe_m), 0.0)


def log_bf12(stats: LevelSuffStats, draw: MixtureDraw, y: Optional[np.ndarray],
             hp: Hyperparams, j_offset: int = 0) -> np.ndarray:
    """log BF for kernel parameters changing with the level (normal-inverse-gamma marginal)

    Component h's level-specific prior is N(mu_h, s2/tau_mu) IGa(a_h, b_h)
    with a_h = tau_sigma / s2_h^2 and b_h = tau_sigma / s2_h.
    """
    if y is not None:
        warn_tiny_variances(draw, float(np.var(y)))

    mu = draw.means[:, None]
    s2 = draw.variances[:, None]
    tau_mu = hp.tau_mu
    a_h = hp.tau_sigma / s2 ** 2
    b_h = hp.tau_sigma / s2

    n = stats.counts.astype(np.float64)
    occupied = n > 0
    safe_n = np.where(occupied, n, 1.0)
    ybar = np.where(occupied, stats.sums / safe_n, mu)
    centered = np.where(occupied, np.maximum(stats.sumsq - stats.sums ** 2 / safe_n, 0.0), 0.0)

    shift = n * tau_mu / (2.0 * (tau_mu + n)) * (mu - ybar) ** 2
    extra = shift + 0.5 * centered
    b_cell = b_h + extra

    cells = (log_rising_factorial(a_h, n / 2.0)
             - a_h * np.log1p(extra / b_h) - (n / 2.0) * np.log(b_cell)
             + 0.5 * (math.log(tau_mu) - np.log(tau_mu + n)))

    pooled_n, pooled_sum, pooled_sumsq = stats.pooled()
    mean = draw.means
    var = draw.variances
    sq_dev = np.maximum(pooled_sumsq - 2.0 * mean * pooled_sum + pooled_n * mean ** 2, 0.0)
    null_terms = pooled_n * 0.5 * np.log(var) + sq_dev / (2.0 * var)

    if not np.all(np.isfinite(cells)):
        _raise_nonfinite(cells, j_offset)
    return cells.sum(axis=(-2, -1)) + null_terms.sum(axis=-1)


def warn_tiny_variances(draw: MixtureDraw, y_var: float) -> bool:
    """Warn when a draw has a component variance below the configured fraction of var(y)"""
    ratio = Config.SCREENING_CONFIG['tiny_variance_ratio']
    tiny = draw.variances < ratio * y_var
    if np.any(tiny):
        logger.warning(
            f"Draw has component variance(s) {draw.variances[tiny]} below {ratio:g} * var(y); "
            f"tau_sigma / s2^2 becomes very large for those components"
        )
        return True
    return False


def _raise_nonfinite(cells: np.ndarray, j_offset: int) -> None:
    position = np.argwhere(~np.isfinite(cells))[0]
    if cells.ndim == 2:
        h, level = position
        j = j_offset
    else:
        j, h, level = position[-3] + j_offset, position[-2], position[-1]
    raise NumericError(f"non-finite Bayes factor term at predictor {j}, component {h}, level {level}")


def make_triple(log_bf11_value: float, log_bf12_value: float) -> LogBFTriple:
    if not (math.isfinite(log_bf11_value) and math.isfinite(log_bf12_value)):
        raise NumericError("log Bayes factors must be finite")
    return LogBFTriple(float(log_bf11_value), float(log_bf12_value))


def posterior_prob_array(log_bf11_values: np.ndarray, log_bf12_values: np.ndarray,
                         kappa: Sequence[float]) -> np.ndarray:
    """Hypothesis probabilities with a trailing axis of 4, normalized in log space"""
    kappa = np.asarray(kappa, dtype=np.float64)
    if kappa.shape != (4,) or np.any(kappa < 0) or abs(kappa.sum() - 1.0) > 1e-10:
        raise InvalidArgumentError(f"kappa must be a 4-simplex (got {kappa})")
    if not np.any(kappa > 0):
        raise InvalidArgumentError("kappa puts no mass on any hypothesis")

    l11 = np.asarray(log_bf11_values, dtype=np.float64)
    l12 = np.asarray(log_bf12_values, dtype=np.float64)
    with np.errstate(divide='ignore'):
        log_kappa = np.log(kappa)
    zeros = np.zeros(np.broadcast(l11, l12).shape)
    log_mass = np.stack([zeros, l11 + zeros, l12 + zeros, l11 + l12], axis=-1) + log_kappa
    norm = logsumexp(log_mass, axis=-1, keepdims=True)
    probs = np.exp(log_mass - norm)
    return probs / probs.sum(axis=-1, keepdims=True)


def posterior_probs(triple: LogBFTriple, kappa: Sequence[float]) -> HypothesisProbs:
    """Pr(H0), Pr(H11), Pr(H12), Pr(H13) for one predictor and one draw"""
    return HypothesisProbs.from_array(posterior_prob_array(triple.log_bf11, triple.log_bf12, kappa))


def dominant_alternative(probs: Sequence[float]) -> str:
    """Which alternative carries most mass: 'weights', 'kernel' or 'both'"""
    values = probs.as_array() if isinstance(probs, HypothesisProbs) else np.asarray(probs)
    return HYPOTHESES[1 + int(np.argmax(values[..., 1:]))]


class BayesFactorNode:
    """Node evaluating the conditional Bayes factors of single predictors"""

    def __init__(self):
        self.config = Config()
        logger.debug("Bayes Factor Node initialized")

    def predictor_triple(self, dataset: Dataset, j: int, draw: MixtureDraw,
                         hp: Hyperparams) -> LogBFTriple:
        """Direct per-predictor evaluation of the three log Bayes factors"""
        x_j = dataset.x[:, j]
        if np.any(x_j == MISSING_CODE):
            raise InvalidArgumentError(f"predictor {j} has missing values")
        stats = accumulate_suff_stats(dataset.y, x_j, draw.allocations, draw.k, int(dataset.levels[j]))
        return make_triple(
            float(log_bf11(stats, draw.weights, hp)),
            float(log_bf12(stats, draw, dataset.y, hp, j_offset=j)),
        )

    def predictor_probs(self, dataset: Dataset, j: int, draws: Sequence[MixtureDraw],
                        hp: Hyperparams) -> HypothesisProbs:
        """Hypothesis probabilities of one predictor averaged over draws under hp.kappa"""
        probs = np.mean([posterior_probs(self.predictor_triple(dataset, j, d, hp), hp.kappa).as_array()
                         for d in draws], axis=0)
        return HypothesisProbs.from_array(probs / probs.sum())
