"""Loss functions over raw network scores.

Every loss returns the batch-mean value together with the gradient of
that mean with respect to the scores, so downstream gradient code never
has to re-scale by the batch size and the regularization weight keeps
the same meaning at any batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LOSS_KINDS",
    "LossSpec",
    "loss_and_grad",
    "loss_value",
    "inverse_frequency_weights",
]

LOSS_KINDS = ("cross_entropy", "weighted_cross_entropy", "squared_error")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "cross_entropy"
    class_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=np.float64)
            if w.ndim != 1 or np.any(w <= 0):
                raise ValueError("class_weights must be a 1-D array of positive reals")
            object.__setattr__(self, "class_weights", w)
        if self.kind == "weighted_cross_entropy" and self.class_weights is None:
            raise ValueError("weighted_cross_entropy requires class_weights")


def inverse_frequency_weights(labels, num_classes: int) -> np.ndarray:
    """Per-class weights n / (C * n_c), i.e. inverse frequency with mean 1."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError("every class needs at least one sample to weight by frequency")
    return labels.size / (num_classes * counts)


def _check_labels(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ValueError("labels must be 1-D")
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range "
                         f"[{y.min()}, {y.max()}]")
    return y.astype(np.intp)


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(spec: LossSpec, scores: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Batch-mean loss and its gradient with respect to ``scores``.

    Cross entropy runs a shifted log-sum-exp internally, so saturated
    scores stay finite. The weighted variant multiplies each sample's loss
    and gradient by class_weights[label] before averaging.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be 2-D (batch x outputs)")
    b, c = scores.shape

    if spec.kind in ("cross_entropy", "weighted_cross_entropy"):
        y = _check_labels(labels, c)
        logp = _log_softmax(scores)
        per_sample = -logp[np.arange(b), y]
        grad = np.exp(logp)
        grad[np.arange(b), y] -= 1.0
        if spec.kind == "weighted_cross_entropy":
            w = spec.class_weights
            if w.size != c:
                raise ValueError(f"class_weights length {w.size} != {c} classes")
            wy = w[y]
            per_sample = per_sample * wy
            grad = grad * wy[:, None]
        return float(per_sample.mean()), grad / b

    # squared error against one-hot targets
    y = _check_labels(labels, c)
    targets = np.zeros_like(scores)
    targets[np.arange(b), y] = 1.0
    diff = scores - targets
    per_sample = (diff * diff).sum(axis=1)
    return float(per_sample.mean()), (2.0 / b) * diff


def loss_value(spec: LossSpec, scores: np.ndarray, labels) -> float:
    """Batch-mean loss only; cheaper when the gradient is not needed."""
    scores = np.asarray(scores, dtype=np.float64)
    b, c = scores.shape
    if spec.kind in ("cross_entropy", "weighted_cross_entropy"):
        y = _check_labels(labels, c)
        logp = _log_softmax(scores)
        per_sample = -logp[np.arange(b), y]
        if spec.kind == "weighted_cross_entropy":
            per_sample = per_sample * spec.class_weights[y]
        return float(per_sample.mean())
    y = _check_labels(labels, c)
    targets = np.zeros_like(scores)
    targets[np.arange(b), y] = 1.0
    diff = scores - targets
    return float((diff * diff).sum(axis=1).mean())
