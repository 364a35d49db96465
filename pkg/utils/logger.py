"""
Logging utility for the screening pipeline
"""

import logging
import os
from datetime import datetime
from typing import Optional


def setup_logger(name: str = 'mobs', level: Optional[str] = None) -> logging.Logger:
    """Setup and configure logger"""

    logger = logging.getLogger(name)

    # Avoid duplicate handlers
    if logger.handlers:
        if level:
            logger.setLevel(getattr(logging, level.upper(), logging.INFO))
        return logger

    level = level or os.getenv('LOG_LEVEL', 'INFO')
    logger.setLevel(getattr(logging, level.upper(), logging.INFO))
    logger.propagate = False

    detailed_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
    )

    simple_formatter = logging.Formatter(
        '%(asctime)s - %(levelname)s - %(message)s'
    )

    # Console handler for important messages
    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(simple_formatter)
    logger.addHandler(console_handler)

    # File logs only when a log directory is configured
    log_dir = os.getenv('MOBS_LOG_DIR', '')
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        stamp = datetime.now().strftime("%Y%m%d")

        file_handler = logging.FileHandler(os.path.join(log_dir, f'mobs_{stamp}.log'))
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(detailed_formatter)
        logger.addHandler(file_handler)

        error_handler = logging.FileHandler(os.path.join(log_dir, f'mobs_errors_{stamp}.log'))
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(detailed_formatter)
        logger.addHandler(error_handler)

    return logger


def log_error(logger: logging.Logger, error_type: str, error_message: str,
              context: str = ""):
    """Log error with context"""
    logger.error(f"{error_type}: {error_message} | Context: {context}")


def log_chain_progress(logger: logging.Logger, iteration: int, total: int,
                       log_joint: float):
    """Log Gibbs chain progress"""
    logger.debug(f"CHAIN: iteration {iteration}/{total}, log joint {log_joint:.4f}")


def log_screening_summary(logger: logging.Logger, result) -> None:
    """Log the outcome of a screening run"""
    kappa = ", ".join(f"{v:.4f}" for v in result.kappa)
    n_degenerate = int(result.degenerate.sum())
    logger.info(
        f"SCREENING: {result.n_predictors} predictors ({n_degenerate} degenerate), "
        f"kappa=({kappa}), iterations={result.iterations}, converged={result.converged}, "
        f"min pi0={result.pi0.min():.3e}"
    )
