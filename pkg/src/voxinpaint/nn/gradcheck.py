"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-3,
                 max_entries: int | None = None, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``x``.

    Returns (flat indices probed, numeric derivatives).  With ``max_entries`` a
    random subset of entries is probed.
    """
    flat = x.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
    out = np.empty(idx.size, dtype=np.float64)
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(fn().data)
        flat[i] = orig - step
        f_minus = float(fn().data)
        flat[i] = orig
        out[j] = (f_plus - f_minus) / (2 * step)
    return idx, out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-3,
                    max_entries: int | None = 64, seed: int = 0) -> list[float]:
    """Relative error (analytic vs central differences) for each input tensor."""
    for x in inputs:
        x.grad = None
    backward(fn())
    rng = np.random.default_rng(seed)
    errors = []
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        idx, num = numeric_grad(fn, x, step=step, max_entries=max_entries, rng=rng)
        errors.append(relative_error(analytic.reshape(-1)[idx], num))
    return errors
