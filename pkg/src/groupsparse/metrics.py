"""Evaluation metrics: accuracy, ROC AUC, max correlation, selection stability.

All functions are pure and safe for concurrent use. The threshold-style
metrics (max_cc, auc) depend only on the ordering of scores, so any
strictly increasing transform of the scores leaves them unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .nn import Network, forward

__all__ = [
    "max_cc",
    "auc",
    "accuracy",
    "predict_classes",
    "positive_scores",
    "mean_pairwise_jaccard",
    "confusion_matrix",
    "EvalReport",
    "evaluate",
]


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size != y.size:
        raise ValueError("scores and labels must have the same length")
    y = y.astype(np.intp)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary (0/1)")
    if y.min() == y.max():
        raise ValueError("metric undefined: labels contain a single class")
    return s, y


def max_cc(scores, labels) -> float:
    """Maximum over thresholds of the Pearson correlation between
    1{score > t} and the binary labels.

    Thresholds are the midpoints between consecutive distinct sorted
    scores, which realizes every possible prediction pattern, so the
    maximum is exact. Degenerate thresholds (all-positive or all-negative
    predictions) contribute correlation 0.
    """
    s, y = _check_binary(scores, labels)
    n = s.size
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    m1 = int(y.sum())
    cum = np.cumsum(y_sorted)
    cuts = np.nonzero(s_sorted[:-1] < s_sorted[1:])[0]
    if cuts.size == 0:
        return 0.0  # constant scores: only degenerate thresholds exist
    n_pred = n - (cuts + 1)  # predicted positives at each cut, in (0, n)
    n_both = m1 - cum[cuts]  # true positives among them
    denom = np.sqrt(n_pred * (n - n_pred) * m1 * (n - m1))
    corr = (n * n_both - n_pred * m1) / denom
    return float(max(corr.max(), 0.0))


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank (Mann-Whitney) formulation:
    P(score_pos > score_neg) + 0.5 * P(tie)."""
    s, y = _check_binary(scores, labels)
    n = s.size
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    # average 1-based ranks over tied runs
    bounds = np.concatenate([[0], np.nonzero(np.diff(s_sorted))[0] + 1, [n]])
    sizes = np.diff(bounds)
    avg = (bounds[:-1] + bounds[1:] - 1) / 2.0 + 1.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(avg, sizes)
    m1 = int(y.sum())
    m0 = n - m1
    return float((ranks[y == 1].sum() - m1 * (m1 + 1) / 2.0) / (m1 * m0))


def positive_scores(scores: np.ndarray) -> np.ndarray:
    """Collapse raw scores to a single positive-class score per sample.

    Two columns give the logit difference (monotone in the positive-class
    probability); one column is returned as-is.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1 or scores.shape[1] == 1:
        return scores.ravel()
    if scores.shape[1] == 2:
        return scores[:, 1] - scores[:, 0]
    raise ValueError("positive_scores needs binary (1 or 2 column) scores")


def predict_classes(scores: np.ndarray, rule: str = "auto") -> np.ndarray:
    """Class predictions from raw scores.

    Binary rule: positive iff the calibrated positive-class probability is
    strictly greater than 0.5 (a score of exactly 0.5 is negative).
    Multiclass rule: argmax.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if rule not in ("auto", "binary", "argmax"):
        raise ValueError(f"unknown rule {rule!r}")
    if scores.ndim == 1 or scores.shape[1] == 1:
        return (scores.ravel() > 0.5).astype(np.intp)
    if rule == "argmax" or (rule == "auto" and scores.shape[1] > 2):
        return scores.argmax(axis=1)
    # two columns: p(class 1) > 0.5 iff logit difference > 0
    return (scores[:, 1] - scores[:, 0] > 0.0).astype(np.intp)


def accuracy(scores, labels, rule: str = "auto") -> float:
    labels = np.asarray(labels).ravel()
    pred = predict_classes(scores, rule)
    return float((pred == labels).mean())


def mean_pairwise_jaccard(sets) -> float:
    """Mean intersection-over-union across all unordered pairs of sets.

    Two empty sets are identical selections and contribute 1.0.
    """
    sets = [frozenset(s) for s in sets]
    if len(sets) < 2:
        raise ValueError("need at least 2 sets")
    total = 0.0
    count = 0
    for a, b in combinations(sets, 2):
        union = len(a | b)
        total += 1.0 if union == 0 else len(a & b) / union
        count += 1
    return total / count


def confusion_matrix(labels, pred, num_classes: int) -> np.ndarray:
    """Counts indexed [true, predicted]; entries sum to n."""
    labels = np.asarray(labels).ravel().astype(np.intp)
    pred = np.asarray(pred).ravel().astype(np.intp)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, pred), 1)
    return cm


@dataclass
class EvalReport:
    accuracy: float
    auc: float | None
    max_cc: float | None
    confusion: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "auc": self.auc,
            "max_cc": self.max_cc,
            "confusion": self.confusion.tolist(),
        }


def evaluate(net: Network, X, labels, num_classes: int, chunk: int = 4096) -> EvalReport:
    """Score a dataset and compute the standard report.

    AUC and max_cc apply to binary problems only and come back as None
    otherwise.
    """
    X = np.asarray(X, dtype=np.float64)
    parts = [forward(net, X[j:j + chunk]).outputs for j in range(0, X.shape[0], chunk)]
    scores = np.vstack(parts)
    labels = np.asarray(labels).ravel()
    pred = predict_classes(scores)
    acc = float((pred == labels).mean())
    auc_val = cc_val = None
    if num_classes == 2 and labels.min() != labels.max():
        pos = positive_scores(scores)
        auc_val = auc(pos, labels)
        cc_val = max_cc(pos, labels)
    return EvalReport(
        accuracy=acc,
        auc=auc_val,
        max_cc=cc_val,
        confusion=confusion_matrix(labels, pred, num_classes),
    )
