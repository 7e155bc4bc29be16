"""Volumetric data model, mesh normalization, voxelization and procedural shapes.

Arrays are indexed ``[z, y, x]`` so that an axial slice is ``grid[z]`` and the
C-order flattening is x-fastest.  Occupancy grids are ``uint8`` in {0, 1};
color volumes are ``float32`` of shape ``(3, R, R, R)`` with values in [0, 1]
and exactly zero wherever the paired grid is empty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

RES = 32
DEFAULT_ALBEDO = (0.8, 0.8, 0.8)
SHAPE_KINDS = ("sphere", "vase", "box_with_pattern")

_BOUND_TOL = 1e-6


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.validate()

    def validate(self) -> None:
        nv = len(self.vertices)
        if len(self.triangles):
            if nv < 3:
                raise ValueError("mesh with triangles needs at least 3 vertices")
            if self.triangles.min() < 0 or self.triangles.max() >= nv:
                raise ValueError("triangle index out of range")
        if self.colors is not None:
            if len(self.colors) != nv:
                raise ValueError(f"expected {nv} vertex colors, got {len(self.colors)}")
            if self.colors.min(initial=0.0) < 0 or self.colors.max(initial=0.0) > 1:
                raise ValueError("vertex colors must lie in [0, 1]")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        used = self.vertices[np.unique(self.triangles)] if len(self.triangles) else self.vertices
        return used.min(axis=0), used.max(axis=0)

    def is_watertight(self) -> bool:
        """Every undirected edge shared by exactly two triangles."""
        if not len(self.triangles):
            return False
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges.sort(axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


# ------------------------------------------------------------------ validation

def check_grid(v: np.ndarray, name: str = "grid") -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 3:
        raise ValueError(f"{name} must be 3-D, got shape {v.shape}")
    if not np.isin(v, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return v.astype(np.uint8, copy=False)


def check_color(c: np.ndarray, occupancy: np.ndarray | None = None, name: str = "color") -> np.ndarray:
    c = np.asarray(c, dtype=np.float32)
    if c.ndim != 4 or c.shape[0] != 3:
        raise ValueError(f"{name} must have shape (3, R, R, R), got {c.shape}")
    if c.min() < 0 or c.max() > 1:
        raise ValueError(f"{name} values must lie in [0, 1]")
    if occupancy is not None and np.any(c[:, occupancy == 0] != 0):
        raise ValueError(f"{name} is nonzero on unoccupied voxels")
    return c


def voxel_centers(res: int = RES) -> np.ndarray:
    """World coordinates of voxel centers along one axis of the unit cube."""
    return -0.5 + (np.arange(res) + 0.5) / res


# ------------------------------------------------------------------ meshes

def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Uniformly scale and center the mesh bounding box into [-0.5, 0.5]^3."""
    if not len(mesh.triangles):
        raise ValueError("cannot normalize a mesh without triangles")
    lo, hi = mesh.bounds()
    extent = float((hi - lo).max())
    if extent <= 0:
        raise ValueError("degenerate mesh: zero bounding-box extent on all axes")
    center = (lo + hi) / 2.0
    verts = (mesh.vertices - center) / extent
    return TriangleMesh(verts, mesh.triangles.copy(), None if mesh.colors is None else mesh.colors.copy())


def _tri_box_overlap(tri: np.ndarray, centers: np.ndarray, half: float) -> np.ndarray:
    """Separating-axis test of one triangle against many axis-aligned cubes.

    Touching counts as overlap.  ``tri`` is (3, 3), ``centers`` is (K, 3).
    """
    v0 = tri[0] - centers
    v1 = tri[1] - centers
    v2 = tri[2] - centers
    keep = np.ones(len(centers), dtype=bool)
    # box face normals
    for ax in range(3):
        lo = np.minimum(np.minimum(v0[:, ax], v1[:, ax]), v2[:, ax])
        hi = np.maximum(np.maximum(v0[:, ax], v1[:, ax]), v2[:, ax])
        keep &= (lo <= half) & (hi >= -half)
    # triangle plane
    e0, e1, e2 = tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]
    normal = np.cross(e0, -e2)
    r = half * np.abs(normal).sum()
    keep &= np.abs(v0 @ normal) <= r
    # edge x axis cross products
    basis = np.eye(3)
    for e in (e0, e1, e2):
        for b in basis:
            a = np.cross(b, e)
            if not a.any():
                continue
            p0, p1, p2 = v0 @ a, v1 @ a, v2 @ a
            r = half * np.abs(a).sum()
            lo = np.minimum(np.minimum(p0, p1), p2)
            hi = np.maximum(np.maximum(p0, p1), p2)
            keep &= (lo <= r) & (hi >= -r)
    return keep


def surface_voxels(mesh: TriangleMesh, res: int = RES) -> np.ndarray:
    """Conservative rasterization: a cell is surface if any triangle touches it."""
    h = 1.0 / res
    grid = np.zeros((res, res, res), dtype=np.uint8)
    verts = mesh.vertices
    for tri_idx in mesh.triangles:
        tri = verts[tri_idx]
        lo = np.floor((tri.min(axis=0) + 0.5) / h).astype(int) - 1
        hi = np.floor((tri.max(axis=0) + 0.5) / h).astype(int) + 1
        lo = np.clip(lo, 0, res - 1)
        hi = np.clip(hi, 0, res - 1)
        xs = np.arange(lo[0], hi[0] + 1)
        ys = np.arange(lo[1], hi[1] + 1)
        zs = np.arange(lo[2], hi[2] + 1)
        iz, iy, ix = np.meshgrid(zs, ys, xs, indexing="ij")
        iz, iy, ix = iz.ravel(), iy.ravel(), ix.ravel()
        centers = np.stack([-0.5 + (ix + 0.5) * h, -0.5 + (iy + 0.5) * h, -0.5 + (iz + 0.5) * h], axis=1)
        hit = _tri_box_overlap(tri, centers, h / 2.0)
        grid[iz[hit], iy[hit], ix[hit]] = 1
    return grid


_SIX = ndimage.generate_binary_structure(3, 1)


def exterior_flood_fill(surface: np.ndarray) -> np.ndarray:
    """Solid grid: everything not 6-connected to an empty boundary voxel."""
    surface = check_grid(surface, "surface")
    empty = surface == 0
    labels, _ = ndimage.label(empty, structure=_SIX)
    faces = np.concatenate([
        labels[0].ravel(), labels[-1].ravel(),
        labels[:, 0].ravel(), labels[:, -1].ravel(),
        labels[:, :, 0].ravel(), labels[:, :, -1].ravel(),
    ])
    exterior_ids = np.unique(faces[faces > 0])
    exterior = np.isin(labels, exterior_ids)
    return (~exterior).astype(np.uint8)


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Closest point on triangle (a, b, c) to p, row-wise.

    Returns (points, barycentric weights (K, 3)).  Region logic follows the
    usual Voronoi-region walk over vertices, edges and face.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    k = len(p)
    bary = np.zeros((k, 3))
    done = np.zeros(k, dtype=bool)

    def assign(cond, u, v, w):
        nonlocal done
        sel = cond & ~done
        bary[sel, 0] = u[sel] if np.ndim(u) else u
        bary[sel, 1] = v[sel] if np.ndim(v) else v
        bary[sel, 2] = w[sel] if np.ndim(w) else w
        done |= sel

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), 1.0, 0.0, 0.0)
        assign((d3 >= 0) & (d4 <= d3), 0.0, 1.0, 0.0)
        t = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1 - t, t, 0.0)
        assign((d6 >= 0) & (d5 <= d6), 0.0, 0.0, 1.0)
        t = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1 - t, 0.0, t)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), 0.0, 1 - t, t)
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        assign(np.ones(k, dtype=bool), 1 - v - w, v, w)
    bary = np.nan_to_num(bary, nan=1.0 / 3.0)
    pts = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    return pts, bary


def sample_surface_colors(mesh: TriangleMesh, points: np.ndarray,
                          albedo=DEFAULT_ALBEDO) -> np.ndarray:
    """RGB at the nearest surface point of each query, interpolated from vertex colors."""
    points = np.asarray(points, dtype=np.float64)
    if mesh.colors is None or not len(points):
        return np.tile(np.asarray(albedo, dtype=np.float64), (len(points), 1))
    verts, tris = mesh.vertices, mesh.triangles
    corners = verts[tris]  # (T, 3, 3)
    centroids = corners.mean(axis=1)
    reach = float(np.linalg.norm(corners - centroids[:, None, :], axis=2).max())
    tree = cKDTree(centroids)
    k = min(8, len(tris))
    _, near = tree.query(points, k=k)
    near = np.asarray(near).reshape(len(points), k)
    # first pass: exact distance to the k nearest-centroid triangles
    rep = np.repeat(np.arange(len(points)), k)
    cand = near.ravel()
    pts, _ = closest_points_on_triangles(points[rep], *(corners[cand, i] for i in range(3)))
    d0 = np.linalg.norm(pts - points[rep], axis=1).reshape(len(points), k).min(axis=1)
    # second pass: every triangle whose centroid could hide a closer point
    out = np.empty((len(points), 3))
    radii = d0 + reach + 1e-12
    chunk = 512
    for lo in range(0, len(points), chunk):
        hi = min(len(points), lo + chunk)
        lists = tree.query_ball_point(points[lo:hi], r=radii[lo:hi])
        q = np.concatenate([np.full(len(lst), lo + i) for i, lst in enumerate(lists)])
        t = np.concatenate([np.asarray(lst, dtype=np.int64) for lst in lists])
        cp, bary = closest_points_on_triangles(points[q], *(corners[t, i] for i in range(3)))
        dist = np.linalg.norm(cp - points[q], axis=1)
        # argmin per query with deterministic tie-break on triangle id
        sel = np.lexsort((t, dist, q))
        first = np.ones(len(sel), dtype=bool)
        first[1:] = q[sel][1:] != q[sel][:-1]
        best = sel[first]
        tri_cols = mesh.colors[tris[t[best]]]
        out[q[best]] = np.einsum("nv,nvc->nc", bary[best], tri_cols)
    return np.clip(out, 0.0, 1.0)


class Voxelized(NamedTuple):
    occupancy: np.ndarray
    color: np.ndarray
    open_mesh: bool


def voxelize(mesh: TriangleMesh, res: int = RES, albedo=DEFAULT_ALBEDO) -> Voxelized:
    """Surface rasterization + exterior flood fill + nearest-surface color.

    ``open_mesh`` is set when the input is not watertight; the grid is still
    produced (the flood fill may then leak into the interior).
    """
    if len(mesh.triangles):
        lo, hi = mesh.bounds()
        if lo.min() < -0.5 - _BOUND_TOL or hi.max() > 0.5 + _BOUND_TOL:
            raise ValueError(f"mesh must lie inside the unit cube, bounds {lo} .. {hi}")
    surface = surface_voxels(mesh, res)
    occupancy = exterior_flood_fill(surface)
    color = np.zeros((3, res, res, res), dtype=np.float32)
    iz, iy, ix = np.nonzero(occupancy)
    if len(iz):
        centers = voxel_centers(res)
        pts = np.stack([centers[ix], centers[iy], centers[iz]], axis=1)
        color[:, iz, iy, ix] = sample_surface_colors(mesh, pts, albedo).T.astype(np.float32)
    return Voxelized(occupancy, color, not mesh.is_watertight())


def apply_mask_removal(v: np.ndarray, c: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero occupancy and color wherever ``m`` is set."""
    if v.shape != m.shape or c.shape[1:] != m.shape:
        raise ValueError(f"shape mismatch: grid {v.shape}, color {c.shape}, mask {m.shape}")
    keep = m == 0
    v_out = np.where(keep, v, 0).astype(v.dtype)
    c_out = np.where(keep[None], c, 0).astype(c.dtype)
    return v_out, c_out


# ------------------------------------------------------------------ procedural corpus

def _lattice(res: int):
    idx = np.arange(res, dtype=np.float64)
    z, y, x = np.meshgrid(idx, idx, idx, indexing="ij")
    return z, y, x


def _palette(rng: np.random.Generator) -> np.ndarray:
    base = np.array([0.92, 0.90, 0.85])
    tint = rng.uniform(-0.15, 0.05, size=3)
    return np.clip(base + tint, 0.05, 1.0)


def _accent(rng: np.random.Generator) -> np.ndarray:
    choices = np.array([[0.15, 0.25, 0.60], [0.55, 0.20, 0.15], [0.20, 0.45, 0.30], [0.75, 0.60, 0.20]])
    return np.clip(choices[rng.integers(len(choices))] + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)


def _paint(occ: np.ndarray, pattern: np.ndarray, base: np.ndarray, accent: np.ndarray,
           rng: np.random.Generator, noise: float = 0.02) -> np.ndarray:
    col = np.where(pattern[None], accent[:, None, None, None], base[:, None, None, None])
    col = col + rng.normal(0.0, noise, size=col.shape)
    col = np.clip(col, 0.0, 1.0) * occ[None]
    return col.astype(np.float32)


def generate_procedural_shape(kind: str, seed: int, res: int = RES) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (occupancy, color) pair for a synthetic artifact.

    * ``sphere``: ball centered on the grid center, radius 9..14 voxels.
    * ``vase``: lathe of a seeded radial profile around the z axis with a
      solid foot; axial slices are disks (foot) or annuli (walls).
    * ``box_with_pattern``: off-center box with a one-sided ridge.
    Colors are near-uniform glaze or banded/checkered decoration (seeded).
    """
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind '{kind}', expected one of {SHAPE_KINDS}")
    rng = np.random.default_rng(seed)
    z, y, x = _lattice(res)
    c = (res - 1) / 2.0
    scale = res / 32.0
    base, accent = _palette(rng), _accent(rng)
    patterned = bool(rng.integers(2))

    if kind == "sphere":
        radius = rng.uniform(9.0, 14.0) * scale
        occ = ((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2 <= radius**2)
        period = rng.integers(3, 7)
        pattern = ((z // period) % 2 == 1) if patterned else np.zeros_like(occ)
    elif kind == "vase":
        z0 = int(rng.integers(2, 5) * scale)
        z1 = res - 1 - int(rng.integers(1, 4) * scale)
        foot = int(rng.integers(3, 6))
        r0 = rng.uniform(7.0, 10.0) * scale
        amp = rng.uniform(1.5, 4.0) * scale
        freq = rng.uniform(0.6, 1.4)
        phase = rng.uniform(0, 2 * np.pi)
        # walls thick enough to keep a core under radius-2 erosion
        wall = rng.uniform(5.5, 7.0) * scale
        zs = np.arange(res, dtype=np.float64)
        prof = r0 + amp * np.sin(2 * np.pi * freq * (zs - z0) / max(z1 - z0, 1) + phase)
        prof = np.clip(prof, wall + 1.5 * scale, 14.5 * scale)
        rho = np.sqrt((x - c) ** 2 + (y - c) ** 2)
        rz = prof[z.astype(int)]
        inside_z = (z >= z0) & (z <= z1)
        solid_foot = (z < z0 + foot) & (rho <= rz)
        walls = (rho <= rz) & (rho >= rz - wall)
        occ = inside_z & (solid_foot | walls)
        period = rng.integers(2, 5)
        pattern = ((z // period) % 2 == 1) if patterned else np.zeros_like(occ)
    else:
        half = rng.uniform(5.0, 11.0, size=3) * scale
        off = rng.uniform(-2.0, 2.0, size=3) * scale
        cz, cy, cx = c + off
        occ = (np.abs(z - cz) <= half[0]) & (np.abs(y - cy) <= half[1]) & (np.abs(x - cx) <= half[2])
        # one-sided ridge on the +x face
        ridge_h = rng.uniform(1.0, 3.0) * scale
        ridge = (np.abs(z - cz) <= half[0] * 0.4) & (np.abs(y - cy) <= half[1]) & \
                (x - cx > half[2]) & (x - cx <= half[2] + ridge_h)
        occ = occ | ridge
        period = rng.integers(2, 5)
        if patterned:
            pattern = ((x // period + y // period + z // period) % 2 == 1)
        else:
            pattern = ridge
    occ = occ.astype(np.uint8)
    color = _paint(occ, np.asarray(pattern, dtype=bool), base, accent, rng)
    return occ, color
