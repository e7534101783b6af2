"""Training losses with analytic gradients."""

from dataclasses import dataclass

import numpy as np

from .layers import softmax


@dataclass(frozen=True)
class LossValue:
    """Scalar loss plus the per-example values it was reduced from."""

    value: float
    per_example: np.ndarray


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[LossValue, np.ndarray]:
    """Mean squared error, averaged per example over features then over the batch.

    Gradient w.r.t. pred is 2 (pred - target) / (K * batch).
    """
    if pred.shape != target.shape or pred.ndim != 2:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    batch, k = pred.shape
    diff = pred - target
    per_example = np.mean(diff * diff, axis=1)
    grad = (2.0 / (k * batch)) * diff
    return LossValue(float(per_example.mean()), per_example), grad


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[LossValue, np.ndarray]:
    """Softmax cross entropy against integer class labels.

    Computed through log-sum-exp; gradient w.r.t. logits is
    (softmax(logits) - onehot(labels)) / batch.
    """
    if logits.ndim != 2:
        raise ValueError(f"expected (batch, classes) logits, got {logits.shape}")
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise ValueError(f"expected {batch} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes})")
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1))
    per_example = lse - shifted[np.arange(batch), labels]
    grad = softmax(logits)
    grad[np.arange(batch), labels] -= 1.0
    grad /= batch
    return LossValue(float(per_example.mean()), per_example), grad
