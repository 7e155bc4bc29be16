"""Geometry (Chamfer, F-score@1mm) and color (masked MSE, PSNR) metrics.

One voxel is treated as one millimetre, so distances are voxel-center
Euclidean distances labeled mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

PSNR_CAP_DB = 99.0
FSCORE_THRESHOLD_MM = 1.0


class UndefinedMetricError(ValueError):
    """The metric has no meaningful value for the inputs (e.g. an empty set)."""


@dataclass(frozen=True)
class GeomReport:
    chamfer_mm: float
    fscore: float
    precision: float
    recall: float
    occupied_pred: int
    occupied_gt: int


@dataclass(frozen=True)
class ColorReport:
    masked_mse: float
    psnr_db: float
    per_slice_psnr: tuple[float, ...]  # NaN marks a slice without overlap voxels
    overlap_count: int


def occupied_points(v: np.ndarray) -> np.ndarray:
    """(K, 3) voxel-center coordinates of occupied voxels, ordered (z, y, x)."""
    return np.argwhere(np.asarray(v) != 0).astype(np.float64)


def nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Distance from each ``src`` point to its nearest ``dst`` point (k-d tree)."""
    d, _ = cKDTree(dst).query(src, k=1)
    return np.asarray(d, dtype=np.float64)


def _points_pair(a: np.ndarray, b: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    pa, pb = occupied_points(a), occupied_points(b)
    if not len(pa) or not len(pb):
        raise UndefinedMetricError(f"{what} undefined: empty occupied set "
                                   f"({len(pa)} vs {len(pb)} voxels)")
    return pa, pb


def chamfer_from_points(pa: np.ndarray, pb: np.ndarray) -> float:
    return float(nearest_distances(pa, pb).mean() + nearest_distances(pb, pa).mean())


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of the two directed mean nearest-neighbor distances (mm)."""
    pa, pb = _points_pair(a, b, "Chamfer distance")
    return chamfer_from_points(pa, pb)


def fscore_from_distances(d_pred: np.ndarray, d_gt: np.ndarray, threshold: float = FSCORE_THRESHOLD_MM):
    precision = float(np.mean(d_pred <= threshold))
    recall = float(np.mean(d_gt <= threshold))
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return f, precision, recall


def fscore_1mm(pred: np.ndarray, gt: np.ndarray) -> GeomReport:
    """Precision/recall at an inclusive 1 mm threshold, plus Chamfer."""
    pp, pg = _points_pair(pred, gt, "F-score")
    d_pred = nearest_distances(pp, pg)
    d_gt = nearest_distances(pg, pp)
    f, p, r = fscore_from_distances(d_pred, d_gt)
    return GeomReport(chamfer_mm=float(d_pred.mean() + d_gt.mean()), fscore=f, precision=p,
                      recall=r, occupied_pred=len(pp), occupied_gt=len(pg))


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse < 0:
        raise ValueError("mse must be non-negative")
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / mse))


def masked_color_metrics(v_hat: np.ndarray, c_hat: np.ndarray, v_gt: np.ndarray, c_gt: np.ndarray) -> ColorReport:
    """Color error on voxels occupied in both prediction and ground truth."""
    overlap = (np.asarray(v_hat) != 0) & (np.asarray(v_gt) != 0)
    count = int(overlap.sum())
    if count == 0:
        raise UndefinedMetricError("color metrics undefined: prediction and ground truth do not overlap")
    sq = (np.asarray(c_hat, dtype=np.float64) - np.asarray(c_gt, dtype=np.float64)) ** 2
    sq = sq.sum(axis=0)  # (Z, Y, X), summed over channels
    mse = float(sq[overlap].sum() / (3 * count))
    per_slice = []
    for z in range(overlap.shape[0]):
        n = int(overlap[z].sum())
        if n == 0:
            per_slice.append(float("nan"))
        else:
            per_slice.append(psnr_from_mse(float(sq[z][overlap[z]].sum() / (3 * n))))
    return ColorReport(masked_mse=mse, psnr_db=psnr_from_mse(mse),
                       per_slice_psnr=tuple(per_slice), overlap_count=count)
