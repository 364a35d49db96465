"""
Core model - domain types and density primitives shared by every node

All probability arithmetic stays in natural-log space; probabilities are only
formed at API boundaries.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln, logsumexp

from utils.errors import InternalError, InvalidArgumentError

LOG_2PI = math.log(2.0 * math.pi)

# Reserved code for a missing predictor value (also the packed-format sentinel)
MISSING_CODE = 255
MAX_LEVELS = 255

DEFAULT_KAPPA = (0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0)

ArrayLike = Union[float, Sequence[float], np.ndarray]


def _column_blocks(p: int, width: int = 64):
    return [(start, min(start + width, p)) for start in range(0, p, width)]


def _check_simplex(values: np.ndarray, name: str, tol: float = 1e-12) -> None:
    if values.ndim != 1 or values.size == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise InvalidArgumentError(f"{name} must be finite and nonnegative")
    if abs(values.sum() - 1.0) > tol:
        raise InvalidArgumentError(f"{name} must sum to 1 (got {values.sum():.17g})")


@dataclass(frozen=True)
class Hyperparams:
    """All tuning knobs: hypothesis prior kappa, the three precisions and the base prior"""

    kappa: Tuple[float, float, float, float] = DEFAULT_KAPPA
    tau_omega: float = 1.0
    tau_mu: float = 50.0
    tau_sigma: float = 50.0
    mu0: float = 0.0
    q: float = 50.0
    a: float = 2.0
    b: float = 0.02
    alpha: float = 1.0
    k: int = 1

    def __post_init__(self):
        kappa = tuple(float(v) for v in self.kappa)
        if len(kappa) != 4:
            raise InvalidArgumentError("kappa must have four entries")
        _check_simplex(np.asarray(kappa), "kappa")
        object.__setattr__(self, 'kappa', kappa)

        for name in ('tau_omega', 'tau_mu', 'tau_sigma', 'q', 'a', 'b', 'alpha'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"{name} must be positive (got {value})")
        if not math.isfinite(self.mu0):
            raise InvalidArgumentError("mu0 must be finite")
        if int(self.k) != self.k or self.k < 1:
            raise InvalidArgumentError(f"k must be a positive integer (got {self.k})")
        object.__setattr__(self, 'k', int(self.k))

    def with_kappa(self, kappa: Sequence[float]) -> 'Hyperparams':
        return replace(self, kappa=tuple(kappa))

    def scaled_precisions(self, factor: float) -> 'Hyperparams':
        """Copy with tau_omega, tau_mu and tau_sigma multiplied by factor"""
        return replace(
            self,
            tau_omega=self.tau_omega * factor,
            tau_mu=self.tau_mu * factor,
            tau_sigma=self.tau_sigma * factor,
        )


@dataclass(frozen=True, eq=False)
class MixtureDraw:
    """One baseline draw: weights, component means/variances and 0-based allocations"""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    allocations: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        allocations = np.asarray(self.allocations, dtype=np.int64)

        _check_simplex(weights, "weights")
        k = weights.size
        if means.shape != (k,) or variances.shape != (k,):
            raise InvalidArgumentError("means and variances must match the number of weights")
        if not np.all(np.isfinite(means)):
            raise InvalidArgumentError("means must be finite")
        if not np.all(np.isfinite(variances)) or np.any(variances <= 0):
            raise InvalidArgumentError("variances must be finite and strictly positive")
        if allocations.ndim != 1:
            raise InvalidArgumentError("allocations must be a vector")
        if allocations.size and (allocations.min() < 0 or allocations.max() >= k):
            raise InvalidArgumentError("allocations reference a component outside 0..k-1")

        for name, value in (('weights', weights), ('means', means),
                            ('variances', variances), ('allocations', allocations)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def n(self) -> int:
        return self.allocations.size

    def component_counts(self) -> np.ndarray:
        return np.bincount(self.allocations, minlength=self.k)

    def permuted(self, perm: Sequence[int]) -> 'MixtureDraw':
        """Relabel components so that new component h is old component perm[h]"""
        perm = np.asarray(perm, dtype=np.int64)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        return MixtureDraw(
            weights=self.weights[perm],
            means=self.means[perm],
            variances=self.variances[perm],
            allocations=inverse[self.allocations],
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response vector plus column-major categorical predictor matrix"""

    y: np.ndarray
    x: np.ndarray
    levels: np.ndarray
    names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        x = np.asarray(self.x)
        if y.ndim != 1 or y.size < 1:
            raise InvalidArgumentError("y must be a non-empty vector")
        if not np.all(np.isfinite(y)):
            raise InvalidArgumentError("y contains non-finite values")
        if x.ndim != 2 or x.shape[0] != y.size or x.shape[1] < 1:
            raise InvalidArgumentError(
                f"x must be an n x p matrix with n={y.size} and p >= 1 (got shape {x.shape})"
            )
        if x.dtype != np.uint8:
            if x.size and (x.min() < 0 or x.max() > MISSING_CODE):
                raise InvalidArgumentError("x codes must lie in 0..255")
            x = x.astype(np.uint8)
        x = np.asfortranarray(x)

        levels = np.asarray(self.levels, dtype=np.int64)
        if levels.shape != (x.shape[1],):
            raise InvalidArgumentError("levels must have one entry per predictor")
        if np.any(levels < 2) or np.any(levels > MAX_LEVELS):
            raise InvalidArgumentError("every predictor needs between 2 and 255 levels")
        for start, stop in _column_blocks(x.shape[1]):
            block = x[:, start:stop]
            out_of_range = np.any((block >= levels[start:stop]) & (block != MISSING_CODE), axis=0)
            if np.any(out_of_range):
                bad = start + int(np.argmax(out_of_range))
                raise InvalidArgumentError(f"predictor {bad} has a code outside its {levels[bad]} levels")

        for value in (y, x, levels):
            value.setflags(write=False)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'levels', levels)
        object.__setattr__(self, 'names', tuple(self.names))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def missing_mask(self) -> np.ndarray:
        return np.concatenate([np.any(self.x[:, start:stop] == MISSING_CODE, axis=0)
                               for start, stop in _column_blocks(self.p)])

    def degenerate_mask(self) -> np.ndarray:
        """Predictors excluded from screening: missing values or an unobserved level"""
        degenerate = self.missing_mask()
        for start, stop in _column_blocks(self.p):
            block = self.x[:, start:stop]
            levels = self.levels[start:stop]
            for level in range(int(levels.max())):
                present = np.any(block == level, axis=0)
                degenerate[start:stop] |= ~present & (level < levels)
        return degenerate


@dataclass(frozen=True)
class HypothesisProbs:
    """Posterior probabilities of H0 and the three alternatives"""

    p0: float
    p11: float
    p12: float
    p13: float

    def __post_init__(self):
        values = self.as_array()
        if np.any(values < 0) or np.any(values > 1) or abs(values.sum() - 1.0) > 1e-10:
            raise InvalidArgumentError(f"invalid hypothesis probabilities {values}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p0, self.p11, self.p12, self.p13])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'HypothesisProbs':
        return cls(*(float(v) for v in values))


def _log_gauss(t, mean, variance):
    return -0.5 * (LOG_2PI + np.log(variance) + (t - mean) ** 2 / variance)


def log_gauss_pdf(t: float, mean: float, variance: float) -> float:
    """log N(t | mean, variance)"""
    if not (math.isfinite(t) and math.isfinite(mean) and math.isfinite(variance)):
        raise InvalidArgumentError("log_gauss_pdf needs finite arguments")
    if variance <= 0:
        raise InvalidArgumentError(f"variance must be positive (got {variance})")
    return float(_log_gauss(t, mean, variance))


def log_multivariate_beta(alpha: ArrayLike, axis: int = -1) -> Union[float, np.ndarray]:
    """log of the multivariate beta function, reduced along axis"""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.size == 0 or np.any(~(alpha > 0)) or not np.all(np.isfinite(alpha)):
        raise InvalidArgumentError("multivariate beta needs strictly positive finite entries")
    result = gammaln(alpha).sum(axis=axis) - gammaln(alpha.sum(axis=axis))
    return float(result) if np.ndim(result) == 0 else result


def _check_mixture(weights, means, variances):
    weights = np.asarray(weights, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    _check_simplex(weights, "weights", tol=1e-10)
    if means.shape != weights.shape or variances.shape != weights.shape:
        raise InvalidArgumentError("weights, means and variances must have equal length")
    if not np.all(np.isfinite(means)):
        raise InvalidArgumentError("means must be finite")
    if not np.all(np.isfinite(variances)) or np.any(variances <= 0):
        raise InvalidArgumentError("variances must be finite and strictly positive")
    return weights, means, variances


def _log_component_mass(t, weights, means, variances):
    """Per-component log(w_h N(t | mu_h, s2_h)) with a trailing component axis"""
    t = np.asarray(t, dtype=np.float64)[..., None]
    with np.errstate(divide='ignore'):
        log_w = np.log(weights)
    return log_w + _log_gauss(t, means, variances)


def mixture_log_density(t: ArrayLike, weights: ArrayLike, means: ArrayLike,
                        variances: ArrayLike) -> Union[float, np.ndarray]:
    """log sum_h w_h N(t | mu_h, s2_h), evaluated by log-sum-exp"""
    weights, means, variances = _check_mixture(weights, means, variances)
    if not np.all(np.isfinite(t)):
        raise InvalidArgumentError("t must be finite")
    result = logsumexp(_log_component_mass(t, weights, means, variances), axis=-1)
    return float(result) if np.ndim(result) == 0 else result


def allocation_probs(y_i: ArrayLike, weights: ArrayLike, means: ArrayLike,
                     variances: ArrayLike) -> np.ndarray:
    """Normalized w_h N(y_i | mu_h, s2_h); a vector y gives one row per observation"""
    weights, means, variances = _check_mixture(weights, means, variances)
    if not np.all(np.isfinite(y_i)):
        raise InvalidArgumentError("y must be finite")
    log_mass = _log_component_mass(y_i, weights, means, variances)
    return _normalize_log_mass(log_mass)


def _normalize_log_mass(log_mass: np.ndarray) -> np.ndarray:
    norm = logsumexp(log_mass, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise InternalError("allocation mass vanished for a finite observation")
    probs = np.exp(log_mass - norm)
    return probs / probs.sum(axis=-1, keepdims=True)
