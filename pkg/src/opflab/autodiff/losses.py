"""Training losses."""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _make, as_tensor

__all__ = ["mse", "bce", "CLAMP"]

CLAMP = 1e-12


def _pair(target, pred, name):
    target = np.asarray(getattr(target, "data", target), dtype=float)
    pred = as_tensor(pred)
    if target.shape != pred.shape:
        raise ShapeError(f"{name}: target {target.shape} and prediction {pred.shape} differ")
    if target.size == 0:
        raise ShapeError(f"{name}: empty input")
    return target, pred


def mse(target, pred) -> Tensor:
    """Mean of squared errors over every entry."""
    y, p = _pair(target, pred, "mse")
    d = p.data - y
    return _make(np.mean(d * d), (p,), lambda g: (g * 2.0 * d / d.size,))


def bce(target, pred) -> Tensor:
    """Mean binary cross-entropy; predictions are clamped to [1e-12, 1 - 1e-12]."""
    c, p = _pair(target, pred, "bce")
    q = np.clip(p.data, CLAMP, 1.0 - CLAMP)
    inside = (p.data >= CLAMP) & (p.data <= 1.0 - CLAMP)
    val = -np.mean(c * np.log(q) + (1.0 - c) * np.log1p(-q))
    grad = np.where(inside, (q - c) / (q * (1.0 - q)), 0.0) / c.size
    return _make(val, (p,), lambda g: (g * grad,))
