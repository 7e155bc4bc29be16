"""Adam with bias correction and a reduce-on-plateau learning-rate rule."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .layers import Parameter


@dataclass(frozen=True)
class AdamConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for b in (self.beta1, self.beta2):
            if not 0 <= b < 1:
                raise ValueError(f"betas must lie in [0, 1), got {b}")


def adam_step(params: list[Parameter], cfg: AdamConfig, step_count: int) -> None:
    """One in-place Adam update; ``step_count`` is 1 for the first step.

    Parameters without a gradient are left untouched.
    """
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**step_count
    c2 = 1.0 - b2**step_count
    for p in params:
        g = p.grad
        if g is None:
            continue
        p.m *= b1
        p.m += (1.0 - b1) * g
        p.v *= b2
        p.v += (1.0 - b2) * (g * g)
        m_hat = p.m / c1
        v_hat = p.v / c2
        update = cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)


class Adam:
    def __init__(self, params: list[Parameter], cfg: AdamConfig):
        self.params = params
        self.cfg = cfg
        self.step_count = 0

    @property
    def lr(self) -> float:
        return self.cfg.lr

    def set_lr(self, lr: float) -> None:
        self.cfg = replace(self.cfg, lr=lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        adam_step(self.params, self.cfg, self.step_count)


@dataclass(frozen=True)
class PlateauSchedulerState:
    factor: float = 0.5
    patience: int = 5
    best_metric: float = float("inf")
    epochs_since_improvement: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError(f"factor must lie in (0, 1), got {self.factor}")
        if self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")


def plateau_step(state: PlateauSchedulerState, val_metric: float) -> tuple[PlateauSchedulerState, float]:
    """Advance the scheduler by one epoch (lower metric is better).

    Returns the new state and the multiplier to apply to the learning rate
    (1.0, or ``factor`` once ``patience`` consecutive epochs failed to improve).
    """
    if val_metric < state.best_metric:
        return replace(state, best_metric=val_metric, epochs_since_improvement=0), 1.0
    waited = state.epochs_since_improvement + 1
    if waited >= state.patience:
        return replace(state, epochs_since_improvement=0), state.factor
    return replace(state, epochs_since_improvement=waited), 1.0
