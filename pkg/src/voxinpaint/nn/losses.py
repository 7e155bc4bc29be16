"""Scalar losses with float64 accumulation."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _node, as_tensor

BCE_EPS = 1e-7


def _scalar(value: float, dtype) -> np.ndarray:
    return np.asarray(value, dtype=dtype)


def bce_loss(probs: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on probabilities clamped to [eps, 1 - eps]."""
    y = as_tensor(targets).data.astype(np.float64)
    p_raw = probs.data.astype(np.float64)
    if y.shape != p_raw.shape:
        raise ValueError(f"bce shape mismatch: {probs.shape} vs {y.shape}")
    p = np.clip(p_raw, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    value = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n
    inside = (p_raw > BCE_EPS) & (p_raw < 1.0 - BCE_EPS)

    def bw(g):
        grad = (-y / p + (1.0 - y) / (1.0 - p)) / n * inside
        return ((float(g) * grad).astype(probs.dtype),)

    return _node(_scalar(value, probs.dtype), (probs,), bw, "bce_loss")


def mse_loss(pred: Tensor, target) -> Tensor:
    t = as_tensor(target).data
    if t.shape != pred.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {t.shape}")
    diff = pred.data.astype(np.float64) - t
    n = diff.size

    def bw(g):
        return ((float(g) * 2.0 / n * diff).astype(pred.dtype),)

    return _node(_scalar((diff * diff).sum() / n, pred.dtype), (pred,), bw, "mse_loss")


def _mask_weights(mask, shape) -> tuple[np.ndarray, float]:
    m = np.broadcast_to(np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64), shape)
    return m, max(1.0, float(m.sum()))


def masked_mse_loss(pred: Tensor, target, mask) -> Tensor:
    """Squared error averaged over voxels where ``mask`` is set; 0 for an empty mask."""
    t = as_tensor(target).data
    m, denom = _mask_weights(mask, pred.shape)
    diff = (pred.data.astype(np.float64) - t) * m

    def bw(g):
        return ((float(g) * 2.0 / denom * diff).astype(pred.dtype),)

    return _node(_scalar((diff * diff).sum() / denom, pred.dtype), (pred,), bw, "masked_mse_loss")


def l1_loss_masked(pred: Tensor, target, mask) -> Tensor:
    """Absolute error summed over masked entries / max(1, mask count x channels)."""
    t = as_tensor(target).data
    m, denom = _mask_weights(mask, pred.shape)
    diff = pred.data.astype(np.float64) - t
    value = (np.abs(diff) * m).sum() / denom

    def bw(g):
        return ((float(g) / denom * np.sign(diff) * m).astype(pred.dtype),)

    return _node(_scalar(value, pred.dtype), (pred,), bw, "l1_loss_masked")
