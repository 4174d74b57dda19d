"""Binary classification metrics: balanced accuracy, ROC-AUC, average precision."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from seizurecast.errors import MetricUndefinedError

THRESHOLD = 0.5


def _labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return y.astype(np.int64)


def _need_both(y: np.ndarray, what: str) -> None:
    if y.size == 0 or y.min() == y.max():
        raise MetricUndefinedError(f"{what} needs both classes in labels")


def threshold(scores, at: float = THRESHOLD) -> np.ndarray:
    """Label decisions: score >= ``at`` is positive."""
    return (np.asarray(scores, dtype=np.float64) >= at).astype(np.int64)


def balanced_accuracy(labels, predictions) -> float:
    """(TPR + TNR) / 2 for hard 0/1 predictions."""
    y = _labels(labels)
    p = _labels(predictions)
    _need_both(y, "balanced accuracy")
    tp = np.sum((y == 1) & (p == 1))
    tn = np.sum((y == 0) & (p == 0))
    return float((tp / np.sum(y == 1) + tn / np.sum(y == 0)) / 2.0)


def roc_auc(labels, scores) -> float:
    """P(score of a random positive > score of a random negative), ties count 1/2.

    Computed from mid-ranks (Mann-Whitney U).
    """
    y = _labels(labels)
    _need_both(y, "roc_auc")
    s = np.asarray(scores, dtype=np.float64)
    ranks = rankdata(s, method="average")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(labels, scores, ids: Sequence | None = None) -> float:
    """Average precision over a strict ranking.

    Items are sorted by descending score; equal scores fall back to ascending
    ``ids`` (default: input position), so the result is deterministic.
    """
    y = _labels(labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricUndefinedError("pr_auc needs at least one positive")
    s = np.asarray(scores, dtype=np.float64)
    key = np.arange(y.size) if ids is None else np.argsort(np.argsort(np.asarray(ids), kind="stable"), kind="stable")
    order = np.lexsort((key, -s))
    hits = y[order]
    precision_at = np.cumsum(hits) / np.arange(1, y.size + 1)
    return float(precision_at[hits == 1].sum() / n_pos)


def all_metrics(labels, scores, ids: Sequence | None = None) -> dict[str, float]:
    return {
        "bacc": balanced_accuracy(labels, threshold(scores)),
        "roc_auc": roc_auc(labels, scores),
        "pr_auc": pr_auc(labels, scores, ids),
    }
