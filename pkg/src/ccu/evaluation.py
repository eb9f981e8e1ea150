"""Detection and accuracy metrics.

Scores are oriented so that higher means more in-distribution; the
in-distribution is the positive class throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CcuModel

__all__ = ["EvalReport", "auc", "aupr", "success_rate", "test_error"]


@dataclass
class EvalReport:
    auc: float | None = None
    aupr: float | None = None
    success_rate: float | None = None
    test_error: float | None = None
    n_in: int = 0
    n_out: int = 0

    def __post_init__(self) -> None:
        for name in ("auc", "aupr", "success_rate", "test_error"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _scores(a) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size == 0:
        raise ValueError("score lists must be non-empty")
    return a


def auc(in_scores, out_scores, higher_is_in: bool = True) -> float:
    """Rank-statistic AUC: P(in > out) + 0.5 P(in = out), ties exact.

    Scores where lower means more in-distribution pass ``higher_is_in=False``
    and are flipped at this boundary.
    """
    in_s, out_s = _scores(in_scores), _scores(out_scores)
    if not higher_is_in:
        in_s, out_s = -in_s, -out_s
    out_sorted = np.sort(out_s)
    below = np.searchsorted(out_sorted, in_s, side="left")
    equal = np.searchsorted(out_sorted, in_s, side="right") - below
    return float((below.sum() + 0.5 * equal.sum()) / (in_s.size * out_s.size))


def aupr(in_scores, out_scores, higher_is_in: bool = True) -> float:
    """Area under precision/recall via step-wise summation over recall
    increments, sweeping a threshold through every distinct score (ties
    grouped); a point is predicted in-distribution when score >= threshold.
    """
    in_s, out_s = _scores(in_scores), _scores(out_scores)
    if not higher_is_in:
        in_s, out_s = -in_s, -out_s
    scores = np.concatenate([in_s, out_s])
    positive = np.concatenate([np.ones(in_s.size, bool), np.zeros(out_s.size, bool)])
    order = np.argsort(-scores, kind="stable")
    scores, positive = scores[order], positive[order]
    # Group indices of the last member of each tie block.
    distinct = np.nonzero(np.diff(scores))[0]
    block_ends = np.concatenate([distinct, [scores.size - 1]])
    tp = np.cumsum(positive)[block_ends]
    fp = np.cumsum(~positive)[block_ends]
    recall = tp / in_s.size
    precision = tp / (tp + fp)
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def success_rate(attack_confidences, in_confidences) -> float:
    """Fraction of attacked points strictly above the in-distribution median.

    The median of an even-length list is the lower middle order statistic,
    keeping the threshold deterministic.
    """
    att, ins = _scores(attack_confidences), _scores(in_confidences)
    median = np.sort(ins)[(ins.size - 1) // 2]
    return float(np.mean(att > median))


def test_error(model: CcuModel, points: np.ndarray, labels: np.ndarray) -> float:
    """Misclassification rate under the argmax of the predictive
    distribution (1-based labels)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    labels = np.asarray(labels)
    if points.shape[0] == 0:
        raise ValueError("test_error requires a non-empty dataset")
    if labels.shape[0] != points.shape[0]:
        raise ValueError("one label per point required")
    if labels.min() < 1 or labels.max() > model.n_classes:
        raise ValueError("labels must lie in {1..n_classes}")
    pred = np.argmax(model.predictive(points), axis=1) + 1
    return float(np.mean(pred != labels))
