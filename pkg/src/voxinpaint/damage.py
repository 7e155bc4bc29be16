"""Synthetic damage: per-slice holes, then one global spherical erosion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import morphology
from .seeding import derive_seed
from .voxel import check_color, check_grid

HOLE_SHAPES = ("circle", "polygon")
MAX_ATTEMPTS = 8


@dataclass(frozen=True)
class DamageConfig:
    holes_per_slice_min: int = 1
    holes_per_slice_max: int = 3
    hole_radius_min: float = 5.0
    hole_radius_max: float = 10.0
    hole_shapes: tuple[str, ...] = HOLE_SHAPES
    erosion_radius: int = 2
    seed: int = 0
    enable_holes: bool = True  # test hook: False skips the slice holes entirely

    def __post_init__(self):
        if not 1 <= self.holes_per_slice_min <= self.holes_per_slice_max:
            raise ValueError("need 1 <= holes_per_slice_min <= holes_per_slice_max")
        if not 1 <= self.hole_radius_min <= self.hole_radius_max < 16:
            raise ValueError("hole radii must satisfy 1 <= min <= max < 16")
        if self.erosion_radius < 0:
            raise ValueError("erosion_radius must be >= 0")
        bad = set(self.hole_shapes) - set(HOLE_SHAPES)
        if bad or not self.hole_shapes:
            raise ValueError(f"hole_shapes must be a nonempty subset of {HOLE_SHAPES}")


@dataclass
class Sample:
    v_gt: np.ndarray
    c_gt: np.ndarray
    v_dam: np.ndarray
    c_dam: np.ndarray
    mask: np.ndarray
    seed: int
    source_id: str = ""
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        if np.any(self.v_dam > self.v_gt):
            raise ValueError("damaged grid has matter absent from ground truth")
        if not np.array_equal(self.mask, compute_mask(self.v_gt, self.v_dam)):
            raise ValueError("mask does not match v_gt AND NOT v_dam")
        if not np.array_equal(self.c_dam, self.c_gt * self.v_dam[None]):
            raise ValueError("c_dam differs from c_gt masked by v_dam")


def compute_mask(v_gt: np.ndarray, v_dam: np.ndarray) -> np.ndarray:
    """1 where ground truth has matter that the damaged grid lacks."""
    if v_gt.shape != v_dam.shape:
        raise ValueError(f"shape mismatch: {v_gt.shape} vs {v_dam.shape}")
    if np.any((v_dam == 1) & (v_gt == 0)):
        raise ValueError("damage may not create matter: v_dam=1 where v_gt=0")
    return ((v_gt == 1) & (v_dam == 0)).astype(np.uint8)


def sample_hole_region(shape: str, center, radius: float, seed: int, size: int = 32) -> np.ndarray:
    """Binary (size, size) stencil indexed [y, x]; ``center`` is (x, y) in pixel units.

    Circles keep pixels within ``radius`` of the center.  Polygons are convex
    5-8-gons with vertices on that circle at jittered angles.
    """
    cx, cy = float(center[0]), float(center[1])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if shape == "circle":
        return ((xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius).astype(np.uint8)
    if shape != "polygon":
        raise ValueError(f"unknown hole shape '{shape}'")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 9))
    step = 2 * np.pi / n
    angles = rng.uniform(0, 2 * np.pi) + step * (np.arange(n) + rng.uniform(-0.35, 0.35, size=n))
    px = cx + radius * np.cos(angles)
    py = cy + radius * np.sin(angles)
    inside = np.ones((size, size), dtype=bool)
    for i in range(n):
        x0, y0 = px[i], py[i]
        x1, y1 = px[(i + 1) % n], py[(i + 1) % n]
        # counter-clockwise vertex order: interior is left of every edge
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= -1e-9
    return inside.astype(np.uint8)


def draw_slice_holes(rng: np.random.Generator, cfg: DamageConfig, size: int = 32) -> list[tuple[str, tuple[float, float], float, int]]:
    """Hole parameters (shape, center, radius, stencil seed) for one axial slice."""
    k = int(rng.integers(cfg.holes_per_slice_min, cfg.holes_per_slice_max + 1))
    shapes = sorted(cfg.hole_shapes)
    holes = []
    for _ in range(k):
        shape = shapes[int(rng.integers(len(shapes)))]
        center = (float(rng.uniform(0, size)), float(rng.uniform(0, size)))
        radius = float(rng.uniform(cfg.hole_radius_min, cfg.hole_radius_max))
        holes.append((shape, center, radius, int(rng.integers(0, 2**63 - 1))))
    return holes


def _damage_once(v_gt: np.ndarray, cfg: DamageConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = v_gt.copy()
    size = v.shape[1]
    if cfg.enable_holes:
        for z in range(v.shape[0]):
            for shape, center, radius, sub_seed in draw_slice_holes(rng, cfg, size):
                stencil = sample_hole_region(shape, center, radius, sub_seed, size)
                v[z][stencil[: v.shape[1], : v.shape[2]] == 1] = 0
    if cfg.erosion_radius > 0:
        v = morphology.erode(v, morphology.sphere(cfg.erosion_radius))
    return v.astype(np.uint8)


def synth_damage(v_gt: np.ndarray, c_gt: np.ndarray, cfg: DamageConfig, source_id: str = "") -> Sample:
    """Damage a ground-truth pair; regenerates with derived seeds if the result is empty."""
    v_gt = check_grid(v_gt, "v_gt")
    c_gt = check_color(c_gt, v_gt, "c_gt")
    seed = cfg.seed
    v_dam = _damage_once(v_gt, cfg, seed)
    attempts = 1
    while not v_dam.any() and v_gt.any() and attempts < MAX_ATTEMPTS:
        seed = derive_seed(cfg.seed, "damage-retry", attempts, source_id)
        v_dam = _damage_once(v_gt, cfg, seed)
        attempts += 1
    mask = compute_mask(v_gt, v_dam)
    c_dam = (c_gt * v_dam[None]).astype(np.float32)
    return Sample(v_gt=v_gt.copy(), c_gt=c_gt.copy(), v_dam=v_dam, c_dam=c_dam, mask=mask,
                  seed=seed, source_id=source_id, degenerate=not v_dam.any(),
                  meta={"attempts": attempts})
