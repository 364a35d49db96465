"""
Report Generator Node - baseline scores, ROC/AUC evaluation and screening reports
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from config import Config
from core_model import Dataset
from nodes.screening_node import ScreeningResult, select_top, selection_report
from utils.errors import InvalidArgumentError
from utils.logger import setup_logger

logger = setup_logger()


@dataclass(frozen=True, eq=False)
class RocCurve:
    """ROC points from the strictest threshold outward, plus the threshold of each point"""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def marginal_corr_scores(dataset: Dataset) -> np.ndarray:
    """|Pearson correlation| of each predictor with y; constant columns score 0"""
    y = dataset.y - dataset.y.mean()
    x = dataset.x.astype(np.float64)
    x = x - x.mean(axis=0)
    x_norm = np.sqrt((x * x).sum(axis=0))
    y_norm = np.sqrt(y @ y)
    numerator = np.abs(y @ x)
    denominator = x_norm * y_norm
    with np.errstate(divide='ignore', invalid='ignore'):
        scores = np.where(denominator > 0, numerator / denominator, 0.0)
    return np.minimum(scores, 1.0)


def roc_auc(scores: Sequence[float], truth: Sequence[int]) -> RocCurve:
    """ROC curve and trapezoid AUC where smaller scores are more significant

    Predictors with equal scores enter the curve together as one step.
    """
    scores = np.asarray(scores, dtype=np.float64)
    p = scores.size
    truth = np.unique(np.asarray(truth, dtype=np.int64))
    if truth.size == 0 or truth.size >= p:
        raise InvalidArgumentError("truth must be a nonempty proper subset of the predictors")
    if truth.min() < 0 or truth.max() >= p:
        raise InvalidArgumentError("truth indices outside 0..p-1")

    positive = np.zeros(p, dtype=bool)
    positive[truth] = True
    thresholds, inverse = np.unique(scores, return_inverse=True)
    tp = np.bincount(inverse, weights=positive.astype(np.float64), minlength=thresholds.size).cumsum()
    fp = np.bincount(inverse, weights=(~positive).astype(np.float64), minlength=thresholds.size).cumsum()

    tpr = np.concatenate([[0.0], tp / positive.sum()])
    fpr = np.concatenate([[0.0], fp / (~positive).sum()])
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(
        thresholds=np.concatenate([[-np.inf], thresholds]),
        fpr=fpr,
        tpr=tpr,
        auc=auc,
    )


class ReportGeneratorNode:
    """Node turning screening results into selection and evaluation summaries"""

    def __init__(self):
        self.config = Config()
        logger.debug("Report Generator Node initialized")

    def selection_summary(self, result: ScreeningResult, d_n: int = None) -> Dict:
        """Selected set and hypothesis breakdown for the top d_n predictors"""
        d_n = d_n or min(self.config.SCREENING_CONFIG['top'], result.n_predictors)
        rows = selection_report(result, d_n)
        breakdown = {name: sum(1 for row in rows if row['dominant'] == name)
                     for name in ('weights', 'kernel', 'both')}
        summary = {
            'd_n': d_n,
            'selected': len(rows),
            'rows': rows,
            'dominant_counts': breakdown,
            'kappa': result.kappa,
            'converged': result.converged,
        }
        logger.info(
            f"REPORT: {len(rows)} predictors selected (d_n={d_n}); dominant alternatives "
            f"weights={breakdown['weights']}, kernel={breakdown['kernel']}, both={breakdown['both']}"
        )
        return summary

    def evaluate(self, result: ScreeningResult, dataset: Dataset, truth: Sequence[int],
                 d_n: int) -> Dict:
        """AUC of the screening ranking and of the marginal-correlation baseline, plus coverage"""
        mobs = roc_auc(result.pi0, truth)
        baseline = roc_auc(-marginal_corr_scores(dataset), truth)
        selected = set(select_top(result.pi0, d_n).tolist())
        covered = set(np.asarray(truth).tolist()) <= selected
        logger.info(f"EVAL: AUC screening={mobs.auc:.4f}, baseline={baseline.auc:.4f}, covered={covered}")
        return {
            'auc_mobs': mobs.auc,
            'auc_baseline': baseline.auc,
            'covered': covered,
            'roc': mobs,
        }
