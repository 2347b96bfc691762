"""Weighted binary cross-entropy over the 2K sigmoid heads."""

from __future__ import annotations

import math

import numpy as np

from .tensor.core import Tensor
from .tensor.functional import _sigmoid

EPS = 1e-7


def wbce(y: int, p: float, w1: float, w0: float) -> float:
    # p is clamped to [EPS, 1 - EPS]; compare 1 - p with EPS since float(1 - EPS) != 1 - EPS
    if 1.0 - p < EPS:
        pos, neg = -math.log1p(-EPS), -math.log(EPS)
    else:
        q = max(p, EPS)
        pos, neg = -math.log(q), -math.log1p(-q)
    return w1 * y * pos + w0 * (1 - y) * neg


def wbce_grad_logit(y: int, z: float, w1: float, w0: float) -> float:
    """dL/dz for p = sigmoid(z); written in the logit form, no cancellation near p=1."""
    p = float(_sigmoid(np.array([z], dtype=np.float64))[0])
    return -w1 * y * (1.0 - p) + w0 * (1 - y) * p


def _elementwise(y, p, w1, w0):
    # 1 - p is exact for p >= 0.5, so comparing it with EPS clamps at exactly 1 - EPS
    top = 1.0 - p < EPS
    q = np.where(top, 0.5, np.maximum(p, EPS))
    pos = np.where(top, -np.log1p(-EPS), -np.log(q))
    neg = np.where(top, -np.log(EPS), -np.log1p(-q))
    return w1 * y * pos + w0 * (1 - y) * neg


def multilabel_loss(y: np.ndarray, p: np.ndarray, w1: np.ndarray, w0: np.ndarray) -> float:
    """Mean over heads of the per-head mean over samples."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("multilabel_loss needs a non-empty batch")
    p = np.asarray(p, dtype=np.float64)
    if not (y.shape == p.shape == np.shape(w1) == np.shape(w0)):
        raise ValueError(f"shape mismatch: y{y.shape} p{p.shape} w1{np.shape(w1)} w0{np.shape(w0)}")
    per_head = _elementwise(y, p, w1, w0).mean(axis=0)
    return float(per_head.mean())


def multilabel_loss_from_logits(logits: Tensor, y: np.ndarray, w1: np.ndarray, w0: np.ndarray) -> Tensor:
    """Differentiable ``multilabel_loss(y, sigmoid(logits), ...)``.

    The forward value uses the clamped probabilities; the backward pass uses
    the logit-form derivative of each element.
    """
    z = logits.data
    if z.shape != np.shape(y):
        raise ValueError(f"logits {z.shape} and targets {np.shape(y)} disagree")
    n, h = z.shape
    if n == 0:
        raise ValueError("multilabel_loss needs a non-empty batch")
    dt = z.dtype
    y = np.asarray(y, dtype=dt)
    w1 = np.asarray(w1, dtype=dt)
    w0 = np.asarray(w0, dtype=dt)
    p = _sigmoid(z.astype(np.float64))
    value = _elementwise(y, p, w1, w0).mean(axis=0).mean()

    def backward(g):
        grad = (-w1 * y * (1.0 - p) + w0 * (1.0 - y) * p) / (n * h)
        return ((g * grad).astype(dt),)

    return Tensor._make(np.asarray(value, dtype=dt), (logits,), backward)
