"""Accuracy, ROC AUC and F1 for binary crossing predictions."""

from typing import NamedTuple, Optional

import numpy as np

from ..errors import ContractError


class Metrics(NamedTuple):
    accuracy: float
    auc: Optional[float]  # None when only one class is present
    f1: float


def confusion(pred, labels):
    pred = np.asarray(pred, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    tn = int(np.sum(~pred & ~labels))
    fn = int(np.sum(~pred & labels))
    return tp, fp, tn, fn


def roc_auc(scores, labels):
    """Mann-Whitney AUC with mid-ranks, so each tied pair counts 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    uniq, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    # 1-based rank of a tie group = mean of the positions it occupies
    last = np.cumsum(counts)
    mid = last - (counts - 1) / 2.0
    rank_sum = mid[inverse][labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(scores, labels, threshold=0.5):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.size != labels.size:
        raise ContractError(f"{scores.size} scores vs {labels.size} labels")
    if scores.size == 0:
        raise ContractError("compute_metrics needs at least one sample")
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must lie in (0, 1), got {threshold}")
    tp, fp, tn, fn = confusion(scores >= threshold, labels == 1)
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return Metrics((tp + tn) / scores.size, roc_auc(scores, labels == 1), f1)
