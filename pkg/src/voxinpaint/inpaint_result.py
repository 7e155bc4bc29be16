from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class InpaintResult:
    v_hat: np.ndarray
    c_hat: np.ndarray
    occupancy_logits: np.ndarray | None
    color_residual: np.ndarray | None
    meta: dict = field(default_factory=dict)
