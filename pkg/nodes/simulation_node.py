"""
Simulation Node - predictor/response generators for the six benchmark models,
replicate studies and the screening-stage scaling benchmark

Models 1-2: y = 1 + 2x1 + x2 - 2x3 + x4 - 2x5 + e
Models 3-4: y = (1 + 2x1 + x2 - 2x3 + x4 - 2x5)^2 + e
Models 5-6: six random predictors index a table of 64 Gaussians
Even-numbered models draw X with a correlated block of predictors.
"""

import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config
from core_model import Dataset, Hyperparams
from nodes.gibbs_sampler_node import ChainConfig, run_chain
from nodes.hyperparam_tuner_node import default_hyperparams
from nodes.report_generator_node import marginal_corr_scores, roc_auc
from nodes.screening_node import screen, select_top
from utils.errors import InvalidArgumentError
from utils.logger import setup_logger
from utils.scheduler import ChunkScheduler, make_generator

logger = setup_logger()

SeedLike = Union[int, np.random.Generator]

LINEAR_COEFFICIENTS = np.array([2.0, 1.0, -2.0, 1.0, -2.0])
MIXTURE_PREDICTORS = 6
CORRELATED_MODELS = (2, 4, 6)
BLOCK_MODES = ('all-rows', 'literal')


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else make_generator(seed)


@dataclass(frozen=True)
class SimSpec:
    model: int
    n: int
    p: int
    correlated: bool = False
    rho: float = 0.5
    block_size: int = 600
    seed: int = 0
    block_mode: str = 'all-rows'

    def __post_init__(self):
        if self.model not in range(1, 7):
            raise InvalidArgumentError(f"model must be 1..6 (got {self.model})")
        if self.n < 1 or self.p < 1:
            raise InvalidArgumentError("n and p must be positive")
        if self.model in CORRELATED_MODELS:
            object.__setattr__(self, 'correlated', True)
        if self.correlated:
            if not 0 < self.rho < 1:
                raise InvalidArgumentError(f"rho must lie in (0, 1) (got {self.rho})")
            if not 1 <= self.block_size <= self.p:
                raise InvalidArgumentError(f"block_size must lie in 1..p (got {self.block_size}, p={self.p})")
        if self.block_mode not in BLOCK_MODES:
            raise InvalidArgumentError(f"block_mode must be one of {BLOCK_MODES}")


@dataclass(frozen=True, eq=False)
class SimInstance:
    dataset: Dataset
    truth: np.ndarray
    spec: Optional[SimSpec] = None


@dataclass(frozen=True, eq=False)
class ResponseDraw:
    """Simulated response, its true predictors and, for the mixture models, the (mu, sigma) table"""

    y: np.ndarray
    truth: np.ndarray
    table: Optional[np.ndarray] = None


def gen_uncorrelated_x(n: int, p: int, seed: SeedLike) -> np.ndarray:
    """n x p matrix of independent Bernoulli(0.5) codes"""
    if n < 1 or p < 1:
        raise InvalidArgumentError("n and p must be positive")
    return np.asfortranarray(_rng(seed).integers(0, 2, size=(n, p), dtype=np.uint8))


def latent_block_matrix(n: int, p: int, rho: float, block_size: int, seed: SeedLike,
                        block_mode: str = 'all-rows') -> Tuple[np.ndarray, np.ndarray]:
    """Latent Gaussian matrix with an exchangeable block: b_ij = w_i + a z_ij on block columns

    a = sqrt(1/rho - 1) gives pairwise latent correlation 1 / (1 + a^2) = rho.
    In 'literal' mode only the first ceil(rho * n) rows are replaced.
    """
    if not 0 < rho < 1:
        raise InvalidArgumentError(f"rho must lie in (0, 1) (got {rho})")
    if not 1 <= block_size <= p:
        raise InvalidArgumentError(f"block_size must lie in 1..{p} (got {block_size})")
    if block_mode not in BLOCK_MODES:
        raise InvalidArgumentError(f"block_mode must be one of {BLOCK_MODES}")
    rng = _rng(seed)
    z = rng.standard_normal((n, p))
    block = np.sort(rng.choice(p, size=block_size, replace=False))
    shared = rng.standard_normal(n)
    a = math.sqrt(1.0 / rho - 1.0)

    rows = slice(None) if block_mode == 'all-rows' else slice(0, math.ceil(rho * n))
    latent = z.copy()
    latent[rows, block] = shared[rows, None] + a * z[rows][:, block]
    return latent, block


def dichotomize(latent: np.ndarray) -> np.ndarray:
    """Split every column at its empirical median"""
    median = np.median(latent, axis=0)
    return np.asfortranarray((latent > median).astype(np.uint8))


def gen_correlated_block(n: int, p: int, rho: float, block_size: int, seed: SeedLike,
                         block_mode: str = 'all-rows') -> np.ndarray:
    """Binary predictors with a randomly placed block of correlated columns"""
    latent, _ = latent_block_matrix(n, p, rho, block_size, seed, block_mode)
    return dichotomize(latent)


def gen_response_details(x: np.ndarray, model: int, seed: SeedLike, noise: bool = True) -> ResponseDraw:
    """Response for one of the six models, with its truth set and mixture table"""
    x = np.asarray(x)
    n, p = x.shape
    if p < MIXTURE_PREDICTORS:
        raise InvalidArgumentError(f"the benchmark models need p >= {MIXTURE_PREDICTORS} (got {p})")
    if model not in range(1, 7):
        raise InvalidArgumentError(f"model must be 1..6 (got {model})")
    rng = _rng(seed)

    if model <= 4:
        truth = np.arange(len(LINEAR_COEFFICIENTS))
        linear = 1.0 + x[:, truth].astype(np.float64) @ LINEAR_COEFFICIENTS
        signal = linear if model <= 2 else linear ** 2
        eps = rng.standard_normal(n) if noise else np.zeros(n)
        return ResponseDraw(y=signal + eps, truth=truth)

    truth = np.sort(rng.choice(p, size=MIXTURE_PREDICTORS, replace=False))
    table = np.column_stack([
        rng.uniform(-1.0, 1.0, size=2 ** MIXTURE_PREDICTORS),
        rng.uniform(0.0, 1.0 / 8.0, size=2 ** MIXTURE_PREDICTORS),
    ])
    config_index = x[:, truth].astype(np.int64) @ (2 ** np.arange(MIXTURE_PREDICTORS))
    eps = rng.standard_normal(n) if noise else np.zeros(n)
    y = table[config_index, 0] + table[config_index, 1] * eps
    return ResponseDraw(y=y, truth=truth, table=table)


def gen_response(x: np.ndarray, model: int, seed: SeedLike, noise: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """(y, truth) for one of the six models; truth holds 0-based predictor indices"""
    draw = gen_response_details(x, model, seed, noise)
    return draw.y, draw.truth


def simulate(spec: SimSpec) -> SimInstance:
    """Full simulated instance: X from stream (0,), y from stream (1,) of spec.seed"""
    x_rng = make_generator(spec.seed, 0)
    y_rng = make_generator(spec.seed, 1)
    if spec.correlated:
        x = gen_correlated_block(spec.n, spec.p, spec.rho, spec.block_size, x_rng, spec.block_mode)
    else:
        x = gen_uncorrelated_x(spec.n, spec.p, x_rng)
    y, truth = gen_response(x, spec.model, y_rng)
    dataset = Dataset(y=y, x=x, levels=np.full(spec.p, 2))
    return SimInstance(dataset=dataset, truth=truth, spec=spec)


def replicate_seeds(seed: int, reps: int) -> List[int]:
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(reps)]


@dataclass(frozen=True)
class StudyResult:
    records: Tuple[Dict, ...] = field(default=())

    @property
    def mean_auc_mobs(self) -> float:
        return float(np.mean([r['auc_mobs'] for r in self.records]))

    @property
    def mean_auc_baseline(self) -> float:
        return float(np.mean([r['auc_baseline'] for r in self.records]))

    @property
    def coverage_rate(self) -> float:
        return float(np.mean([r['covered'] for r in self.records]))


def run_replicate(spec: SimSpec, hp: Hyperparams, cfg: ChainConfig, d_n: int) -> Dict:
    """Simulate, fit, screen and score one replicate"""
    instance = simulate(spec)
    dataset = instance.dataset
    chain = run_chain(dataset.y, hp, replace(cfg, seed=spec.seed))
    result = screen(dataset, chain, hp, chunk_size=Config.SCREENING_CONFIG['chunk_size'])
    selected = set(select_top(result.pi0, d_n).tolist())
    return {
        'seed': spec.seed,
        'auc_mobs': roc_auc(result.pi0, instance.truth).auc,
        'auc_baseline': roc_auc(-marginal_corr_scores(dataset), instance.truth).auc,
        'covered': set(instance.truth.tolist()) <= selected,
        'kappa': result.kappa,
    }


def replicate_study(model: int, n: int, p: int, reps: int, k: int, cfg: ChainConfig, d_n: int,
                    seed: int = 0, threads: int = 1, hp: Optional[Hyperparams] = None,
                    block_size: Optional[int] = None) -> StudyResult:
    """Replicated screening benchmark on one model; replicates run in parallel across seeds"""
    hp = hp or default_hyperparams(k)
    block_size = block_size or min(Config.SIMULATION_CONFIG['block_size'], p)
    specs = [SimSpec(model=model, n=n, p=p, seed=s, block_size=block_size)
             for s in replicate_seeds(seed, reps)]
    logger.info(f"STUDY: model {model}, n={n}, p={p}, {reps} replicates, k={hp.k}")
    scheduler = ChunkScheduler(threads=threads, chunk_size=1)
    records = scheduler.map(lambda spec: run_replicate(spec, hp, cfg, d_n), specs)
    study = StudyResult(records=tuple(records))
    logger.info(
        f"STUDY: mean AUC screening={study.mean_auc_mobs:.4f}, baseline={study.mean_auc_baseline:.4f}, "
        f"coverage={study.coverage_rate:.2f}"
    )
    return study


def scaling_benchmark(sizes: Sequence[Tuple[int, int]], n_draws: int = 100, k: int = 3,
                      seed: int = 0, repeats: int = 3, threads: int = 1) -> List[Dict]:
    """Best-of-repeats wall time of the screening stage alone for each (n, p)"""
    hp = default_hyperparams(k)
    timings = []
    for n, p in sizes:
        instance = simulate(SimSpec(model=1, n=n, p=p, seed=seed))
        cfg = ChainConfig(total_iters=2 * n_draws, keep=n_draws, seed=seed)
        chain = run_chain(instance.dataset.y, hp, cfg)
        best = math.inf
        for _ in range(repeats):
            started = time.perf_counter()
            screen(instance.dataset, chain, hp, threads=threads)
            best = min(best, time.perf_counter() - started)
        logger.info(f"BENCH: n={n}, p={p}, S={n_draws}: {best:.3f}s")
        timings.append({'n': n, 'p': p, 'draws': n_draws, 'seconds': best})
    return timings
