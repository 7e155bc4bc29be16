"""Slow reference implementations used to cross-check the vectorized code."""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np


# ------------------------------------------------------------------ convolution

def conv_naive(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Zero-padded stride-1 cross-correlation with explicit loops over every index."""
    n, cin = x.shape[:2]
    cout, _, *ks = w.shape
    spatial = x.shape[2:]
    pad = ks[0] // 2
    out = np.zeros((n, cout) + spatial, dtype=np.float64)
    for bi in range(n):
        for co in range(cout):
            for pos in itertools.product(*(range(s) for s in spatial)):
                acc = 0.0 if b is None else float(b[co])
                for ci in range(cin):
                    for off in itertools.product(*(range(k) for k in ks)):
                        src = tuple(p + o - pad for p, o in zip(pos, off))
                        if all(0 <= s < lim for s, lim in zip(src, spatial)):
                            acc += float(x[(bi, ci) + src]) * float(w[(co, ci) + off])
                out[(bi, co) + pos] = acc
    return out


def conv_transpose_naive(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kernel-2 stride-2 transpose convolution, weight (Cin, Cout, 2, ...)."""
    n, cin = x.shape[:2]
    cout = w.shape[1]
    spatial = x.shape[2:]
    out = np.zeros((n, cout) + tuple(2 * s for s in spatial), dtype=np.float64)
    for bi in range(n):
        for co in range(cout):
            out[bi, co] += b[co]
            for ci in range(cin):
                for pos in itertools.product(*(range(s) for s in spatial)):
                    for off in itertools.product(*([range(2)] * len(spatial))):
                        dst = tuple(2 * p + o for p, o in zip(pos, off))
                        out[(bi, co) + dst] += x[(bi, ci) + pos] * w[(ci, co) + off]
    return out


def max_pool_naive(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x window max pool and a 0/1 map of the first-index argmax of each window."""
    nd = x.ndim - 2
    out_shape = x.shape[:2] + tuple(s // 2 for s in x.shape[2:])
    out = np.zeros(out_shape)
    arg = np.zeros(x.shape)
    for idx in itertools.product(*(range(s) for s in out_shape)):
        lead, pos = idx[:2], idx[2:]
        best, best_src = -np.inf, None
        for off in itertools.product(*([range(2)] * nd)):
            src = lead + tuple(2 * p + o for p, o in zip(pos, off))
            if x[src] > best:
                best, best_src = x[src], src
        out[idx] = best
        arg[best_src] = 1
    return out, arg


# ------------------------------------------------------------------ morphology

def erode_naive(g: np.ndarray, offsets) -> np.ndarray:
    out = np.zeros_like(g)
    for p in itertools.product(*(range(s) for s in g.shape)):
        ok = True
        for o in offsets:
            q = tuple(a + b for a, b in zip(p, o))
            if not all(0 <= c < s for c, s in zip(q, g.shape)) or not g[q]:
                ok = False
                break
        out[p] = ok
    return out


def dilate_naive(g: np.ndarray, offsets) -> np.ndarray:
    """Output voxel is set when some offset from it lands on matter."""
    out = np.zeros_like(g)
    for p in itertools.product(*(range(s) for s in g.shape)):
        for o in offsets:
            q = tuple(a + b for a, b in zip(p, o))
            if all(0 <= c < s for c, s in zip(q, g.shape)) and g[q]:
                out[p] = 1
                break
    return out


def close_naive(g: np.ndarray, offsets) -> np.ndarray:
    """Dilate then erode (reflected offsets) on a lattice padded by the element radius."""
    r = max(max(abs(c) for c in o) for o in offsets)
    padded = np.pad(g, r)
    reflected = [tuple(-c for c in o) for o in offsets]
    closed = erode_naive(dilate_naive(padded, offsets), reflected)
    return closed[tuple(slice(r, r + n) for n in g.shape)]


def sphere_offsets_naive(r: int) -> set[tuple[int, int, int]]:
    return {o for o in itertools.product(range(-r, r + 1), repeat=3) if o[0] ** 2 + o[1] ** 2 + o[2] ** 2 <= r * r}


# ------------------------------------------------------------------ flood fill

def flood_fill_naive(surface: np.ndarray) -> np.ndarray:
    """BFS over empty voxels from every empty boundary voxel (6-connectivity)."""
    shape = surface.shape
    outside = np.zeros(shape, dtype=bool)
    q = deque()
    for p in itertools.product(*(range(s) for s in shape)):
        on_face = any(c == 0 or c == s - 1 for c, s in zip(p, shape))
        if on_face and not surface[p]:
            outside[p] = True
            q.append(p)
    while q:
        p = q.popleft()
        for axis in range(3):
            for step in (-1, 1):
                n = list(p)
                n[axis] += step
                n = tuple(n)
                if all(0 <= c < s for c, s in zip(n, shape)) and not outside[n] and not surface[n]:
                    outside[n] = True
                    q.append(n)
    return (~outside).astype(np.uint8)


# ------------------------------------------------------------------ distances

def nearest_naive(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    d = np.sqrt(((src[:, None, :].astype(np.float64) - dst[None, :, :]) ** 2).sum(-1))
    return d.min(axis=1)


def chamfer_naive(pa: np.ndarray, pb: np.ndarray) -> float:
    return float(nearest_naive(pa, pb).mean() + nearest_naive(pb, pa).mean())


def fscore_naive(pp: np.ndarray, pg: np.ndarray, thr: float = 1.0) -> tuple[float, float, float]:
    precision = float((nearest_naive(pp, pg) <= thr).mean())
    recall = float((nearest_naive(pg, pp) <= thr).mean())
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


# ------------------------------------------------------------------ meshes

def box_mesh(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Closed, outward-wound triangle mesh of an axis-aligned box."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[lo[0] if i & 1 == 0 else hi[0], lo[1] if i & 2 == 0 else hi[1], lo[2] if i & 4 == 0 else hi[2]]
                  for i in range(8)])
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return v, np.array(tris)


def icosphere(radius: float, subdivisions: int = 3) -> tuple[np.ndarray, np.ndarray]:
    t = (1 + 5 ** 0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
             (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5), (2, 4, 11),
             (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache, new_faces = {}, []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts) * radius, np.array(faces)


def inside_mesh_parity(points: np.ndarray, verts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Point-in-closed-mesh by counting crossings of a fixed, skewed ray (Moller-Trumbore)."""
    d = np.array([0.5773, 0.5821, 0.5717])
    d = d / np.linalg.norm(d)
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    e1, e2 = b - a, c - a
    h = np.cross(d, e2)
    det = (e1 * h).sum(1)
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    inside = np.zeros(len(points), dtype=bool)
    for k, p in enumerate(points):
        s = p - a
        u = (s * h).sum(1) * inv
        q = np.cross(s, e1)
        v = (q @ d) * inv
        t = (q * e2).sum(1) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
        inside[k] = hit.sum() % 2 == 1
    return inside
