"""Group fairness and performance metrics computed from hard labels.

All rates condition on the binary sensitive attribute s (1 = privileged) and,
for the mistreatment metrics, on the true label y.  Metrics are defined on
predicted labels, never on scores.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


class DegenerateGroupError(ValueError):
    """A group or (s, y) conditioning cell needed for a rate is empty."""


@dataclass(frozen=True)
class FairnessScores:
    accuracy: float
    positive_rate_by_group: tuple[float, float]  # (P[yhat=1|s=0], P[yhat=1|s=1])
    p_rule: float
    tpr_by_group: tuple[float, float]
    fpr_by_group: tuple[float, float]
    d_tpr: float  # TPR_{s=1} - TPR_{s=0}
    d_fpr: float  # FPR_{s=1} - FPR_{s=0}


def _labels_of(preds) -> np.ndarray:
    return preds.labels if hasattr(preds, "labels") else np.asarray(preds)


def demographic_parity_rates(preds, s) -> tuple[float, float]:
    """Empirical positive-prediction rate per group: (rate at s=0, rate at s=1)."""
    labels = _labels_of(preds)
    s = np.asarray(s)
    rates = []
    for group in (0, 1):
        mask = s == group
        if not mask.any():
            raise DegenerateGroupError(f"group s={group} is empty")
        rates.append(float(np.mean(labels[mask] == 1)))
    return rates[0], rates[1]


def p_rule(preds, s) -> float:
    """min(rate0/rate1, rate1/rate0); 1.0 if both rates are zero, 0.0 if exactly one is."""
    rate0, rate1 = demographic_parity_rates(preds, s)
    if rate0 == 0.0 and rate1 == 0.0:
        logger.info("p_rule: both positive rates are zero, returning 1.0 (no disparity)")
        return 1.0
    if rate0 == 0.0 or rate1 == 0.0:
        logger.info("p_rule: exactly one positive rate is zero, returning 0.0")
        return 0.0
    return min(rate0 / rate1, rate1 / rate0)


def disparate_mistreatment(preds, y, s) -> tuple[float, float]:
    """(d_tpr, d_fpr) with the s=1 minus s=0 orientation."""
    tpr, fpr = _group_rates(preds, y, s)
    return tpr[1] - tpr[0], fpr[1] - fpr[0]


def _group_rates(preds, y, s):
    labels = _labels_of(preds)
    y = np.asarray(y)
    s = np.asarray(s)
    tpr, fpr = {}, {}
    for group in (0, 1):
        for yv, store in ((1, tpr), (0, fpr)):
            cell = (s == group) & (y == yv)
            if not cell.any():
                raise DegenerateGroupError(f"cell (s={group}, y={yv}) is empty")
            store[group] = float(np.mean(labels[cell] == 1))
    return tpr, fpr


def tpr_fpr_by_group(preds, y, s) -> tuple[tuple[float, float], tuple[float, float]]:
    """((TPR_s0, TPR_s1), (FPR_s0, FPR_s1))."""
    tpr, fpr = _group_rates(preds, y, s)
    return (tpr[0], tpr[1]), (fpr[0], fpr[1])


def accuracy(preds, y) -> float:
    labels = _labels_of(preds)
    y = np.asarray(y)
    if len(labels) != len(y):
        raise DegenerateGroupError("predictions and labels have different lengths")
    if len(y) == 0:
        raise DegenerateGroupError("empty prediction set")
    return float(np.mean(labels == y))


def compute_fairness_scores(preds, y, s) -> FairnessScores:
    """All Table-style metrics in one pass."""
    tpr, fpr = _group_rates(preds, y, s)
    return FairnessScores(
        accuracy=accuracy(preds, y),
        positive_rate_by_group=demographic_parity_rates(preds, s),
        p_rule=p_rule(preds, s),
        tpr_by_group=(tpr[0], tpr[1]),
        fpr_by_group=(fpr[0], fpr[1]),
        d_tpr=tpr[1] - tpr[0],
        d_fpr=fpr[1] - fpr[0],
    )
