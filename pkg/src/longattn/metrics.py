"""Evaluation metrics: exact AUC, ROC sweep, accuracy.

AUC is computed exactly as the Mann-Whitney statistic
P(score_fake > score_real) + 0.5 P(tie) by counting over sorted groups of
equal scores, which makes equality with a brute-force pairwise oracle
testable to floating-point exactness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Metrics:
    acc: float
    auc: float
    roc: list[tuple[float, float]]
    n: int
    loss: float | None = None
    scores: np.ndarray | None = None
    labels: np.ndarray | None = None


def _check_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError(
            f"scores {scores.shape} and labels {labels.shape} must be equal-"
            f"length vectors"
        )
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 (real) or 1 (fake)")
    return scores, labels


def auc_exact(scores, labels) -> float:
    """Exact area under the ROC curve with proper tie handling.

    ``scores`` rank fakeness (higher = more fake); ``labels`` are 1 for fake.
    Raises if either class is absent, where AUC is undefined.
    """
    scores, labels = _check_scores(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"AUC undefined for single-class labels ({n_pos} fake, {n_neg} real)"
        )
    order = np.argsort(scores, kind="stable")
    s, y = scores[order], labels[order]
    wins = 0.0  # counted in half-units to keep tie arithmetic exact
    neg_below = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        pos_here = int(y[i:j].sum())
        neg_here = (j - i) - pos_here
        wins += pos_here * (2 * neg_below + neg_here)
        neg_below += neg_here
        i = j
    return wins / (2.0 * n_pos * n_neg)


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) sweep over all score thresholds, from (0,0) to (1,1)."""
    scores, labels = _check_scores(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC undefined for single-class labels")
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    s = scores[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < y.size:
        j = i
        while j < y.size and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += (j - i) - int(y[i:j].sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return points


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of correct calls at a fixed fakeness threshold."""
    scores, labels = _check_scores(scores, labels)
    pred = (scores > threshold).astype(np.int64)
    return float((pred == labels).mean())


def best_threshold_accuracy(scores, labels) -> float:
    """Max accuracy over all thresholds; never below the larger class prior."""
    scores, labels = _check_scores(scores, labels)
    n = labels.size
    thresholds = np.concatenate(([-np.inf], np.unique(scores)))
    best = 0.0
    for t in thresholds:
        pred = scores > t
        best = max(best, float((pred == labels.astype(bool)).mean()))
    return best


def summarize(scores, labels, loss: float | None = None) -> Metrics:
    scores, labels = _check_scores(scores, labels)
    return Metrics(
        acc=accuracy(scores, labels),
        auc=auc_exact(scores, labels),
        roc=roc_points(scores, labels),
        n=int(labels.size),
        loss=loss,
        scores=scores,
        labels=labels,
    )
