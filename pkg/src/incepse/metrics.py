"""Rank-based AUROC and its macro average over classes."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

__all__ = ["UndefinedMetricError", "auroc_binary", "macro_auroc"]


class UndefinedMetricError(ValueError):
    """AUROC is undefined: the labels contain a single class."""


def auroc_binary(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counting 1/2."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUROC undefined with {n_pos} positives and {n_neg} negatives")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auroc(scores, labels) -> tuple[float, list[int]]:
    """Unweighted mean of per-class AUROC over classes with both label values.

    Returns the mean and the indices of skipped (single-valued) classes.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError(f"need matching [N, C] matrices, got {scores.shape} and {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    if scores.shape[0] < 2:
        raise ValueError("macro AUROC needs at least two rows")
    values, skipped = [], []
    for c in range(scores.shape[1]):
        try:
            values.append(auroc_binary(scores[:, c], labels[:, c]))
        except UndefinedMetricError:
            skipped.append(c)
    if not values:
        raise UndefinedMetricError("macro AUROC undefined: every class lacks a positive or a negative")
    return float(np.mean(values)), skipped
