"""Volume-level classification metrics."""
from __future__ import annotations
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from ..core.schemas import MetricsReport

logger = logging.getLogger("KneeXAI.Metrics")


def _as_arrays(scores: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores but {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(int)


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(s+ > s-) + P(s+ = s-) / 2 over positive/negative pairs."""
    scores, labels = _as_arrays(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc is undefined when only one class is present")
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    """Fraction of volumes where (score >= threshold) matches the label."""
    scores, labels = _as_arrays(scores, labels)
    if scores.size == 0:
        raise ValueError("accuracy needs at least one sample")
    return float(np.mean((scores >= threshold).astype(int) == labels))


def evaluate_scores(scores: Sequence[float], labels: Sequence[int],
                    logger: Optional[logging.Logger] = None) -> MetricsReport:
    """AUC and accuracy; AUC is left out (with a warning) when the labels hold one class."""
    logger = logger or logging.getLogger("KneeXAI.Metrics")
    scores, labels = _as_arrays(scores, labels)
    auc = None
    if 0 < labels.sum() < labels.size:
        auc = roc_auc(scores, labels)
    else:
        logger.warning(f"Only one class among {labels.size} label(s); AUC omitted")
    return MetricsReport(auc=auc, accuracy=accuracy(scores, labels), n_samples=int(labels.size))
