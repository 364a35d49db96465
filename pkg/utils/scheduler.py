"""
Chunk scheduler - partitions work into fixed blocks and runs them on a worker pool

Results always come back in block order and are combined by a tree reduction
over fixed block boundaries, so the outcome does not depend on the number of
workers.
"""

from typing import Any, Callable, Iterable, List, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from utils.errors import InvalidArgumentError
from utils.logger import setup_logger

logger = setup_logger()


def make_generator(seed: int, *spawn_key: int) -> np.random.Generator:
    """Generator for one stream: SeedSequence(seed, spawn_key=spawn_key) driving PCG64

    Stream splitting rule: chain i uses spawn_key (i,), tuner block b uses
    (b,), simulation parts use (0,) for X and (1,) for y under their own seed.
    """
    sequence = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.PCG64(sequence))


def tree_reduce(partials: Sequence[Any], combine: Callable[[Any, Any], Any] = None) -> Any:
    """Pairwise reduction with boundaries fixed by position"""
    if not partials:
        raise InvalidArgumentError("nothing to reduce")
    combine = combine or (lambda left, right: left + right)
    level = list(partials)
    while len(level) > 1:
        paired = [combine(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            paired.append(level[-1])
        level = paired
    return level[0]


class ChunkScheduler:
    """Ordered worker pool over fixed-size blocks of predictors (or draws)"""

    def __init__(self, threads: int = 1, chunk_size: int = 256):
        if threads < 1:
            raise InvalidArgumentError(f"worker count must be >= 1 (got {threads})")
        if chunk_size < 1:
            raise InvalidArgumentError(f"chunk size must be >= 1 (got {chunk_size})")
        self.threads = int(threads)
        self.chunk_size = int(chunk_size)
        logger.debug(f"Chunk scheduler initialized ({self.threads} workers, chunk size {self.chunk_size})")

    def chunks(self, total: int) -> List[Tuple[int, int]]:
        """Half-open (start, stop) blocks covering range(total)"""
        return [(start, min(start + self.chunk_size, total))
                for start in range(0, total, self.chunk_size)]

    def map(self, fn: Callable[..., Any], items: Iterable[Any]) -> List[Any]:
        """fn over items, results in item order"""
        items = list(items)
        if self.threads == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        return Parallel(n_jobs=self.threads, prefer="threads")(
            delayed(fn)(item) for item in items
        )

    def map_chunks(self, fn: Callable[[int, int], Any], total: int) -> List[Any]:
        """fn(start, stop) over every block of range(total), in block order"""
        return self.map(lambda bounds: fn(*bounds), self.chunks(total))
