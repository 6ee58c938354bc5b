"""Scalar losses. Every function returns ``(loss, grad_wrt_prediction)``."""

from __future__ import annotations

from typing import Tuple

import numpy as np
from scipy.special import expit

from ..errors import ConfigError, DimensionError
from .tensor import DTYPE


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def mse(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: prediction shape {pred.shape} vs target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def softmax_cross_entropy(logits: np.ndarray, classes) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy of integer ``classes`` under ``softmax(logits)``."""
    logits = np.asarray(logits, dtype=DTYPE)
    if logits.ndim == 1:
        logits = logits[None]
    classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    if classes.shape[0] != logits.shape[0]:
        raise DimensionError(
            f"softmax_cross_entropy: {logits.shape[0]} rows of logits vs {classes.shape[0]} classes"
        )
    if np.any(classes < 0) or np.any(classes >= logits.shape[1]):
        raise DimensionError("softmax_cross_entropy: class index out of range")
    B = logits.shape[0]
    rows = np.arange(B)
    lse = logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[rows, classes]))
    grad = softmax(logits)
    grad[rows, classes] -= 1.0
    return loss, grad / B


def sigmoid_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Binary cross-entropy on logits, averaged over all elements."""
    logits = np.asarray(logits, dtype=DTYPE)
    labels = np.asarray(labels, dtype=DTYPE)
    if logits.shape != labels.shape:
        raise DimensionError(f"sigmoid_cross_entropy: {logits.shape} vs {labels.shape}")
    # log(1 + exp(-|x|)) + max(x, 0) - x*y
    loss = np.logaddexp(0.0, logits) - logits * labels
    n = logits.size
    return float(loss.sum() / n), (expit(logits) - labels) / n


def expectile_weights(u: np.ndarray, tau: float) -> np.ndarray:
    return np.where(u < 0, 1.0 - tau, tau)


def expectile_loss(u: np.ndarray, tau: float) -> Tuple[float, np.ndarray]:
    """Asymmetric squared loss ``|tau - 1[u < 0]| * u**2`` averaged over ``u``."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"expectile tau must lie in (0, 1), got {tau}")
    u = np.asarray(u, dtype=DTYPE)
    w = expectile_weights(u, tau)
    n = u.size
    return float(np.sum(w * u * u) / n), 2.0 * w * u / n
