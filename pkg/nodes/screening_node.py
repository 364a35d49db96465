"""
Screening Node - Bayes factor cache, empirical-Bayes kappa iteration and the selection rule

Stage two evaluates (log BF11, log BF12) for every predictor and retained draw,
then alternates between averaging hypothesis probabilities over draws and
resetting kappa to their mean over predictors until kappa stops moving.
"""

import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from core_model import DEFAULT_KAPPA, Dataset, Hyperparams, HypothesisProbs
from nodes.bayes_factor_node import (
    accumulate_block_stats,
    dominant_alternative,
    log_bf11,
    log_bf12,
    posterior_prob_array,
    stats_block_width,
)
from nodes.gibbs_sampler_node import ChainOutput
from utils.errors import InvalidArgumentError, MobsIOError, NumericError
from utils.logger import log_error, log_screening_summary, setup_logger
from utils.scheduler import ChunkScheduler, tree_reduce

logger = setup_logger()

SPILL_MAGIC = b'MBSC'
SPILL_VERSION = 1
SPILL_HEADER = struct.Struct('<4sIQQQ')  # magic, version, chunk start, chunk length, S
BYTES_PER_ENTRY = 16


class BFCache:
    """(log BF11, log BF12) for every predictor and draw, stored in predictor chunks

    Chunks live in memory, or in a spill file when p * S * 16 bytes exceeds the
    memory budget. Each spilled chunk is a 32-byte header followed by
    little-endian float64 pairs in predictor-major, draw-minor order.
    """

    def __init__(self, p: int, n_draws: int, chunk_size: int, degenerate: np.ndarray,
                 mem_budget: Optional[int] = None, spill_dir: Optional[str] = None):
        self.p = int(p)
        self.n_draws = int(n_draws)
        self.chunk_size = int(chunk_size)
        self.degenerate = np.asarray(degenerate, dtype=bool)
        self.chunks = ChunkScheduler(chunk_size=self.chunk_size).chunks(self.p)
        budget = Config.SCREENING_CONFIG['mem_budget'] if mem_budget is None else mem_budget

        self._blocks: Dict[int, np.ndarray] = {}
        self._offsets: Dict[int, int] = {}
        self.spill_path: Optional[str] = None
        if self.p * self.n_draws * BYTES_PER_ENTRY > budget:
            fd, self.spill_path = tempfile.mkstemp(prefix='mobs_bf_', suffix='.bin', dir=spill_dir)
            os.close(fd)
            logger.info(f"BF cache exceeds memory budget ({budget} bytes); spilling to {self.spill_path}")

    @property
    def spilled(self) -> bool:
        return self.spill_path is not None

    def store(self, start: int, block: np.ndarray) -> None:
        """Save one chunk of shape (m, S, 2); chunks must arrive in order when spilling"""
        block = np.ascontiguousarray(block, dtype='<f8')
        if block.shape[1:] != (self.n_draws, 2):
            raise InvalidArgumentError(f"cache block has shape {block.shape}")
        if not np.all(np.isfinite(block)):
            raise NumericError(f"non-finite Bayes factor in chunk starting at predictor {start}")
        if not self.spilled:
            self._blocks[start] = block
            return
        try:
            with open(self.spill_path, 'ab') as handle:
                self._offsets[start] = handle.tell() + SPILL_HEADER.size
                handle.write(SPILL_HEADER.pack(SPILL_MAGIC, SPILL_VERSION, start, block.shape[0], self.n_draws))
                handle.write(block.tobytes())
        except OSError as e:
            raise MobsIOError(f"cannot write spill chunk: {e}", self.spill_path) from e

    def load(self, start: int) -> np.ndarray:
        """Chunk starting at predictor start, shape (m, S, 2)"""
        if not self.spilled:
            return self._blocks[start]
        offset = self._offsets[start]
        with open(self.spill_path, 'rb') as handle:
            handle.seek(offset - SPILL_HEADER.size)
            magic, version, chunk_start, length, n_draws = SPILL_HEADER.unpack(handle.read(SPILL_HEADER.size))
        if magic != SPILL_MAGIC or version != SPILL_VERSION or chunk_start != start or n_draws != self.n_draws:
            raise MobsIOError(f"corrupt spill chunk header at offset {offset}", self.spill_path)
        return np.array(np.memmap(self.spill_path, dtype='<f8', mode='r', offset=offset,
                                  shape=(length, self.n_draws, 2)))

    def iter_chunks(self) -> Iterator[Tuple[int, int, np.ndarray]]:
        for start, stop in self.chunks:
            yield start, stop, self.load(start)

    def log_bf_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Full p x S arrays of log BF11 and log BF12"""
        blocks = np.concatenate([self.load(start) for start, _ in self.chunks], axis=0)
        return blocks[..., 0], blocks[..., 1]

    def close(self) -> None:
        if self.spill_path and os.path.exists(self.spill_path):
            os.remove(self.spill_path)
        self._blocks.clear()
        self._offsets.clear()

    def __enter__(self) -> 'BFCache':
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True, eq=False)
class ScreeningResult:
    """Per-predictor hypothesis probabilities (rows p0, p11, p12, p13) and the converged kappa"""

    probs: np.ndarray
    kappa: Tuple[float, float, float, float]
    iterations: int
    converged: bool
    degenerate: np.ndarray
    seed: Optional[int] = None

    @property
    def pi0(self) -> np.ndarray:
        return self.probs[:, 0]

    @property
    def n_predictors(self) -> int:
        return self.probs.shape[0]

    def hypothesis_probs(self, j: int) -> HypothesisProbs:
        return HypothesisProbs.from_array(self.probs[j])


def _chunk_bayes_factors(dataset: Dataset, chain: ChainOutput, hp: Hyperparams,
                         start: int, stop: int, degenerate: np.ndarray) -> np.ndarray:
    """(m, S, 2) log Bayes factors for predictors start..stop-1"""
    block = np.zeros((stop - start, chain.n_draws, 2))
    width = stats_block_width(dataset.n)
    for lo in range(start, stop, width):
        hi = min(lo + width, stop)
        x_block = dataset.x[:, lo:hi]
        d = int(dataset.levels[lo:hi].max())
        for s, draw in enumerate(chain.draws):
            stats = accumulate_block_stats(dataset.y, x_block, draw.allocations, draw.k, d)
            try:
                block[lo - start:hi - start, s, 0] = log_bf11(stats, draw.weights, hp)
                block[lo - start:hi - start, s, 1] = log_bf12(stats, draw, None, hp, j_offset=lo)
            except NumericError as e:
                raise NumericError(f"{e} (draw {s})") from e
    block[degenerate[start:stop]] = 0.0
    return block


def compute_bf_cache(dataset: Dataset, chain: ChainOutput, hp: Hyperparams,
                     scheduler: Optional[ChunkScheduler] = None,
                     mem_budget: Optional[int] = None,
                     spill_dir: Optional[str] = None) -> BFCache:
    """Log Bayes factors for every (predictor, draw) pair"""
    if chain.n != dataset.n:
        raise InvalidArgumentError(f"chain has {chain.n} allocations per draw but the dataset has n={dataset.n}")
    if chain.k != hp.k:
        raise InvalidArgumentError(f"chain has k={chain.k} but hyperparameters say k={hp.k}")
    scheduler = scheduler or ChunkScheduler()

    y_var = float(np.var(dataset.y))
    ratio = Config.SCREENING_CONFIG['tiny_variance_ratio']
    tiny = sum(bool(np.any(d.variances < ratio * y_var)) for d in chain.draws)
    if tiny:
        logger.warning(f"{tiny} of {chain.n_draws} draws have a component variance below {ratio:g} * var(y)")

    degenerate = dataset.degenerate_mask()
    cache = BFCache(dataset.p, chain.n_draws, scheduler.chunk_size, degenerate,
                    mem_budget=mem_budget, spill_dir=spill_dir)
    try:
        if cache.spilled:
            # bounded memory: one wave of chunks at a time, written in order
            wave = scheduler.threads
            for first in range(0, len(cache.chunks), wave):
                bounds = cache.chunks[first:first + wave]
                blocks = scheduler.map(
                    lambda b: _chunk_bayes_factors(dataset, chain, hp, b[0], b[1], degenerate), bounds)
                for (start, _), block in zip(bounds, blocks):
                    cache.store(start, block)
        else:
            blocks = scheduler.map_chunks(
                lambda start, stop: _chunk_bayes_factors(dataset, chain, hp, start, stop, degenerate),
                dataset.p)
            for (start, _), block in zip(cache.chunks, blocks):
                cache.store(start, block)
    except Exception:
        cache.close()
        raise
    return cache


def _chunk_average_probs(cache: BFCache, start: int, kappa: Sequence[float]) -> np.ndarray:
    block = cache.load(start)
    return posterior_prob_array(block[..., 0], block[..., 1], kappa).mean(axis=1)


def kappa_step(cache: BFCache, kappa: Sequence[float],
               scheduler: Optional[ChunkScheduler] = None) -> np.ndarray:
    """One empirical-Bayes update: mean over non-degenerate predictors of draw-averaged probabilities"""
    scheduler = scheduler or ChunkScheduler(chunk_size=cache.chunk_size)
    keep = ~cache.degenerate
    if not np.any(keep):
        return np.asarray(kappa, dtype=np.float64)

    def partial(bounds):
        start, stop = bounds
        averaged = _chunk_average_probs(cache, start, kappa)
        return averaged[keep[start:stop]].sum(axis=0)

    total = tree_reduce(scheduler.map(partial, cache.chunks))
    new_kappa = total / np.count_nonzero(keep)
    return new_kappa / new_kappa.sum()


def kappa_fixed_point(cache: BFCache, kappa0: Sequence[float] = DEFAULT_KAPPA, tol: float = 1e-8,
                      max_iter: int = 200,
                      scheduler: Optional[ChunkScheduler] = None) -> Tuple[np.ndarray, int, bool]:
    """Iterate kappa_step until the max-norm change drops below tol"""
    if tol <= 0 or max_iter < 0:
        raise InvalidArgumentError("tol must be positive and max_iter nonnegative")
    kappa = np.asarray(kappa0, dtype=np.float64)
    for iteration in range(1, max_iter + 1):
        new_kappa = kappa_step(cache, kappa, scheduler)
        change = float(np.max(np.abs(new_kappa - kappa)))
        kappa = new_kappa
        logger.debug(f"KAPPA: iteration {iteration}, kappa={kappa}, change={change:.3e}")
        if change < tol:
            return kappa, iteration, True
    return kappa, max_iter, False


def averaged_probs(cache: BFCache, kappa: Sequence[float],
                   scheduler: Optional[ChunkScheduler] = None) -> np.ndarray:
    """p x 4 draw-averaged hypothesis probabilities; degenerate predictors get (1, 0, 0, 0)"""
    scheduler = scheduler or ChunkScheduler(chunk_size=cache.chunk_size)
    blocks = scheduler.map(lambda bounds: _chunk_average_probs(cache, bounds[0], kappa), cache.chunks)
    probs = np.concatenate(blocks, axis=0)
    probs = probs / probs.sum(axis=1, keepdims=True)
    probs[cache.degenerate] = (1.0, 0.0, 0.0, 0.0)
    return probs


def screen(dataset: Dataset, chain: ChainOutput, hp: Hyperparams, tol: float = 1e-8,
           max_iter: int = 200, threads: int = 1, chunk_size: int = 256,
           mem_budget: Optional[int] = None, spill_dir: Optional[str] = None) -> ScreeningResult:
    """Bayes factor cache, kappa fixed point, final averaged probabilities"""
    scheduler = ChunkScheduler(threads=threads, chunk_size=chunk_size)
    with compute_bf_cache(dataset, chain, hp, scheduler, mem_budget, spill_dir) as cache:
        kappa, iterations, converged = kappa_fixed_point(cache, hp.kappa, tol, max_iter, scheduler)
        probs = averaged_probs(cache, kappa, scheduler)
        degenerate = cache.degenerate.copy()
    return ScreeningResult(
        probs=probs,
        kappa=tuple(float(v) for v in kappa),
        iterations=iterations,
        converged=converged,
        degenerate=degenerate,
    )


def select_top(probs: Sequence[float], d_n: int) -> np.ndarray:
    """Indices with pi0 at or below the d_n-th smallest value (ties all kept)"""
    probs = np.asarray(probs, dtype=np.float64)
    if not 1 <= d_n <= probs.size:
        raise InvalidArgumentError(f"d_n must lie in 1..{probs.size} (got {d_n})")
    threshold = np.partition(probs, d_n - 1)[d_n - 1]
    return np.flatnonzero(probs <= threshold)


def selection_report(result: ScreeningResult, d_n: int) -> List[Dict]:
    """Selected predictors ordered by pi0 (then index) with their dominant alternative"""
    selected = select_top(result.pi0, d_n)
    order = selected[np.lexsort((selected, result.pi0[selected]))]
    return [
        {
            'j': int(j),
            'pi0': float(result.probs[j, 0]),
            'p11': float(result.probs[j, 1]),
            'p12': float(result.probs[j, 2]),
            'p13': float(result.probs[j, 3]),
            'dominant': dominant_alternative(result.probs[j]),
        }
        for j in order
    ]


class ScreeningNode:
    """Node running stage two of the pipeline"""

    def __init__(self):
        self.config = Config()
        logger.debug("Screening Node initialized")

    def run(self, dataset: Dataset, chain: ChainOutput, hp: Hyperparams,
            tol: Optional[float] = None, max_iter: Optional[int] = None,
            threads: Optional[int] = None, chunk_size: Optional[int] = None,
            mem_budget: Optional[int] = None) -> ScreeningResult:
        """Screen every predictor of the dataset against the baseline draws"""
        settings = self.config.SCREENING_CONFIG
        try:
            logger.info(
                f"Screening {dataset.p} predictors (n={dataset.n}) over {chain.n_draws} draws"
            )
            result = screen(
                dataset, chain, hp,
                tol=settings['tol'] if tol is None else tol,
                max_iter=settings['max_iter'] if max_iter is None else max_iter,
                threads=threads or settings['threads'],
                chunk_size=chunk_size or settings['chunk_size'],
                mem_budget=settings['mem_budget'] if mem_budget is None else mem_budget,
            )
            if not result.converged:
                logger.warning(f"kappa did not converge within {result.iterations} iterations")
            log_screening_summary(logger, result)
            return result
        except NumericError as e:
            log_error(logger, "Numeric failure", str(e), f"p={dataset.p}, draws={chain.n_draws}")
            raise
