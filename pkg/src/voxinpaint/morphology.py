"""Binary 3-D erosion, dilation and closing with box or sphere elements.

Voxels outside the grid count as unoccupied.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StructuringElement:
    kind: str
    radius: int
    offsets: tuple[tuple[int, int, int], ...]

    def reflected(self) -> "StructuringElement":
        return StructuringElement(self.kind, self.radius, tuple((-a, -b, -c) for a, b, c in self.offsets))


def make_se(kind: str, radius: int) -> StructuringElement:
    if kind not in ("box", "sphere"):
        raise ValueError(f"unknown structuring element kind '{kind}'")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    rng = range(-radius, radius + 1)
    offs = [o for o in itertools.product(rng, rng, rng)
            if kind == "box" or o[0] ** 2 + o[1] ** 2 + o[2] ** 2 <= radius**2]
    return StructuringElement(kind, radius, tuple(offs))


def box(radius: int = 1) -> StructuringElement:
    return make_se("box", radius)


def sphere(radius: int) -> StructuringElement:
    return make_se("sphere", radius)


def shifted(g: np.ndarray, offset) -> np.ndarray:
    """``out[p] = g[p + offset]`` with zeros where ``p + offset`` leaves the grid."""
    out = np.zeros_like(g)
    src, dst = [], []
    for o, n in zip(offset, g.shape):
        if abs(o) >= n:
            return out
        src.append(slice(max(o, 0), n + min(o, 0)))
        dst.append(slice(max(-o, 0), n - max(o, 0)))
    out[tuple(dst)] = g[tuple(src)]
    return out


def erode(g: np.ndarray, se: StructuringElement) -> np.ndarray:
    """1 where every offset from the voxel lands on an occupied voxel."""
    g = np.asarray(g).astype(bool)
    out = np.ones_like(g)
    for off in se.offsets:
        out &= shifted(g, off)
    return out.astype(np.uint8)


def dilate(g: np.ndarray, se: StructuringElement) -> np.ndarray:
    """1 where some offset from the voxel reaches an occupied voxel."""
    g = np.asarray(g).astype(bool)
    out = np.zeros_like(g)
    for off in se.offsets:
        out |= shifted(g, off)
    return out.astype(np.uint8)


def close(g: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Dilation then erosion, evaluated on the zero-extended lattice.

    The intermediate dilation may spill past the grid edge, so matter touching
    the boundary is never removed and the result always contains ``g``.
    """
    r = max(max(abs(c) for c in off) for off in se.offsets)
    padded = np.pad(np.asarray(g).astype(np.uint8), r)
    closed = erode(dilate(padded, se), se.reflected())
    inner = tuple(slice(r, r + n) for n in np.shape(g))
    return closed[inner]
