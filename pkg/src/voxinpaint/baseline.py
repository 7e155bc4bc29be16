"""Symmetry-fill baseline: mirror intact voxels across the better of the
x = 15.5 or y = 15.5 planes into the damaged region."""

from __future__ import annotations

import numpy as np

from .inpaint_result import InpaintResult

# array axes of the candidate mirror planes: x (axis 2) first, then y (axis 1)
MIRROR_AXES = {"x": 2, "y": 1}


def mirror_iou(v: np.ndarray, mask: np.ndarray, axis: int) -> float:
    """Occupancy IoU between the intact part of ``v`` and its mirror image,
    counted only where both a voxel and its mirror partner are unmasked."""
    known = mask == 0
    valid = known & np.flip(known, axis=axis)
    a = (v != 0) & valid
    b = np.flip(v != 0, axis=axis) & valid
    union = int((a | b).sum())
    if union == 0:
        return 0.0
    return int((a & b).sum()) / union


def choose_plane(v_dam: np.ndarray, mask: np.ndarray) -> str:
    scores = {name: mirror_iou(v_dam, mask, ax) for name, ax in MIRROR_AXES.items()}
    return max(scores, key=lambda k: (scores[k], k == "x"))


def symmetry_baseline(v_dam: np.ndarray, c_dam: np.ndarray, mask: np.ndarray) -> InpaintResult:
    """Fill masked voxels whose mirror partner is occupied and unmasked.

    Unmasked voxels are returned untouched and every other masked voxel is
    left empty; color is copied from the partner.
    """
    plane = choose_plane(v_dam, mask)
    axis = MIRROR_AXES[plane]
    known_occ = (v_dam != 0) & (mask == 0)
    partner_occ = np.flip(known_occ, axis=axis)
    fill = (mask != 0) & partner_occ
    v_hat = np.where(mask != 0, 0, v_dam)
    v_hat[fill] = 1
    c_hat = np.where(mask[None] != 0, 0, c_dam)
    mirrored = np.flip(c_dam, axis=axis + 1)
    c_hat[:, fill] = mirrored[:, fill]
    return InpaintResult(v_hat=v_hat.astype(np.uint8), c_hat=c_hat.astype(np.float32),
                         occupancy_logits=None, color_residual=None, meta={"plane": plane})
