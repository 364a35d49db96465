"""
Configuration management for the screening pipeline
"""

import os


def _optional_int(name: str):
    value = os.getenv(name, '')
    return int(value) if value else None


class Config:
    """Configuration class with environment variable support"""

    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOG_DIR = os.getenv('MOBS_LOG_DIR', '')

    # Mixture size used when no --k is given
    DEFAULT_K = int(os.getenv('MOBS_K', '3'))
    SEED = int(os.getenv('MOBS_SEED', '2024'))

    # Baseline Gibbs chain
    CHAIN_CONFIG = {
        'total_iters': int(os.getenv('MOBS_TOTAL_ITERS', '6000')),
        'burn_in': _optional_int('MOBS_BURN_IN'),
        'keep': int(os.getenv('MOBS_KEEP', '500')),
        'thin': int(os.getenv('MOBS_THIN', '1')),
        'n_chains': int(os.getenv('MOBS_CHAINS', '1')),
        'log_every': int(os.getenv('MOBS_LOG_EVERY', '500')),
    }

    # Stage-two screening
    SCREENING_CONFIG = {
        'threads': int(os.getenv('MOBS_THREADS', '1')),
        'chunk_size': int(os.getenv('MOBS_CHUNK_SIZE', '256')),
        'mem_budget': int(os.getenv('MOBS_MEM_BUDGET', str(2 * 1024 ** 3))),
        'tol': float(os.getenv('MOBS_TOL', '1e-8')),
        'max_iter': int(os.getenv('MOBS_MAX_ITER', '200')),
        'top': int(os.getenv('MOBS_TOP', '50')),
        'weight_floor': 1e-12,
        'tiny_variance_ratio': 1e-8,
        # per-draw cell statistics temporaries, bytes
        'stats_block_bytes': int(os.getenv('MOBS_STATS_BLOCK_BYTES', str(64 * 1024 ** 2))),
    }

    # Prior signal-to-noise tuner
    TUNER_CONFIG = {
        'mc_draws': int(os.getenv('MOBS_SNR_DRAWS', '5000')),
        'block_size': 250,
        'target_ratio': (0.05, 0.1),
    }

    # Simulation harness
    SIMULATION_CONFIG = {
        'n': 200,
        'p': 2000,
        'rho': 0.5,
        'block_size': 600,
        'n_true_linear': 5,
        'n_true_mixture': 6,
    }

    @classmethod
    def validate_config(cls):
        """Validate that configured values are usable"""
        problems = []

        chain = cls.CHAIN_CONFIG
        if cls.DEFAULT_K < 1:
            problems.append('MOBS_K must be >= 1')
        if chain['total_iters'] < 1:
            problems.append('MOBS_TOTAL_ITERS must be >= 1')
        if chain['keep'] < 1 or chain['thin'] < 1:
            problems.append('MOBS_KEEP and MOBS_THIN must be >= 1')
        if chain['keep'] * chain['thin'] > chain['total_iters']:
            problems.append('MOBS_KEEP * MOBS_THIN exceeds MOBS_TOTAL_ITERS')

        screening = cls.SCREENING_CONFIG
        if screening['threads'] < 1:
            problems.append('MOBS_THREADS must be >= 1')
        if screening['chunk_size'] < 1:
            problems.append('MOBS_CHUNK_SIZE must be >= 1')
        if screening['tol'] <= 0:
            problems.append('MOBS_TOL must be positive')
        if screening['stats_block_bytes'] < 1:
            problems.append('MOBS_STATS_BLOCK_BYTES must be >= 1')

        if problems:
            raise ValueError(f"Invalid configuration: {'; '.join(problems)}")

        return True
