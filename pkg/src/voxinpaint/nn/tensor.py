"""Reverse-mode autodiff over numpy arrays.

Every op builds a node holding its output array, its parent tensors and a
closure mapping the output gradient to one gradient per parent.  Only the
operations the two U-Nets need are provided; all of them keep the dtype of
their inputs so the same graph can run in float32 for training and float64
for finite-difference checks.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# rough per-chunk budget for the shifted-GEMM convolution buffers (elements)
_CONV_CHUNK_ELEMS = 24_000_000


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN/Inf in its output or gradient."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(arr: np.ndarray, op: str, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite {what} produced by op '{op}'")


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    _check_finite(data, op, "activation")
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    ``loss`` must be a scalar.  The graph is released afterwards.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _check_finite(g, node.op, "gradient")
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            _check_finite(pg, node.op, "gradient")
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------- elementwise

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    b_arr = b.data.astype(a.dtype, copy=False)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b_arr, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(a.data - b.data.astype(a.dtype, copy=False), (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    ad, bd = a.data, b.data.astype(a.dtype, copy=False)

    def bw(g):
        ga = _unbroadcast(g * bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(ad * bd, (a, b), bw, "mul")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0

    def bw(g):
        return (g * pos,)

    return _node(np.where(pos, x.data, 0).astype(x.dtype, copy=False), (x,), bw, "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    p = d >= 0
    out[p] = 1.0 / (1.0 + np.exp(-d[p]))
    e = np.exp(d[~p])
    out[~p] = e / (1.0 + e)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _node(out, (x,), bw, "sigmoid")


# ---------------------------------------------------------------- structure

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape

    def bw(g):
        return (g.reshape(src),)

    return _node(x.data.reshape(shape), (x,), bw, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _node(np.ascontiguousarray(x.data.transpose(axes)), (x,), bw, "transpose")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return _node(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), bw, "concat")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    total = x.data.sum(axis=axis, dtype=np.float64, keepdims=keepdims).astype(x.dtype)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype),)

    return _node(np.asarray(total), (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    return mul(sum(x), 1.0 / x.data.size)


# ---------------------------------------------------------------- dense layers

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x: (N, in), w: (out, in), b: (out,)."""
    if x.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear shape mismatch: input {x.shape} vs weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data
        gb = g.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, bw, "linear")


# ---------------------------------------------------------------- convolution

def _offsets(nd: int, k: int, strides: Sequence[int]) -> list[int]:
    half = k // 2
    return [
        int(np.dot([o - half for o in off], strides))
        for off in itertools.product(range(k), repeat=nd)
    ]


def _padded_flat(x: np.ndarray, pad: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """(N, C, *S) -> (C, N * prod(S + 2 pad)) with zero borders."""
    n, c = x.shape[:2]
    spatial = x.shape[2:]
    padded = tuple(s + 2 * pad for s in spatial)
    buf = np.zeros((c, n) + padded, dtype=x.dtype)
    inner = (slice(None), slice(None)) + tuple(slice(pad, pad + s) for s in spatial)
    buf[inner] = x.transpose((1, 0) + tuple(range(2, x.ndim)))
    return buf.reshape(c, -1), padded


def _unpad_flat(flat: np.ndarray, n: int, padded: tuple[int, ...], pad: int) -> np.ndarray:
    c = flat.shape[0]
    vol = flat.reshape((c, n) + padded)
    inner = (slice(None), slice(None)) + tuple(slice(pad, s - pad) for s in padded)
    out = vol[inner]
    return np.ascontiguousarray(out.transpose((1, 0) + tuple(range(2, out.ndim))))


def _flat_strides(padded: tuple[int, ...]) -> list[int]:
    strides = []
    acc = 1
    for s in reversed(padded):
        strides.append(acc)
        acc *= s
    return strides[::-1]


def _chunks(n: int, per_item: int) -> Iterable[slice]:
    step = max(1, _CONV_CHUNK_ELEMS // max(per_item, 1))
    for lo in range(0, n, step):
        yield slice(lo, min(n, lo + step))


def _conv_fwd(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, c = x.shape[:2]
    co, k = w.shape[0], w.shape[2]
    nd = x.ndim - 2
    spatial = x.shape[2:]
    if k == 1:
        xm = x.reshape(n, c, -1)
        return (w.reshape(co, c) @ xm).reshape((n, co) + spatial)
    pad = k // 2
    kk = k**nd
    wall = w.transpose(tuple(range(2, 2 + nd)) + (0, 1)).reshape(kk * co, c)
    per_item = kk * max(c, co) * int(np.prod([s + 2 * pad for s in spatial]))
    outs = []
    for sl in _chunks(n, per_item):
        f, padded = _padded_flat(x[sl], pad)
        m = f.shape[1]
        offs = _offsets(nd, k, _flat_strides(padded))
        m0 = max(abs(d) for d in offs)
        length = m - 2 * m0
        y = (wall @ f).reshape(kk, co, m)
        acc = np.zeros((co, m), dtype=x.dtype)
        for i, d in enumerate(offs):
            acc[:, m0 : m0 + length] += y[i, :, m0 + d : m0 + d + length]
        outs.append(_unpad_flat(acc, sl.stop - sl.start, padded, pad))
    return np.concatenate(outs, axis=0) if len(outs) > 1 else outs[0]


def _conv_bwd(x: np.ndarray, w: np.ndarray, g: np.ndarray, need_x: bool):
    n, c = x.shape[:2]
    co, k = w.shape[0], w.shape[2]
    nd = x.ndim - 2
    spatial = x.shape[2:]
    if k == 1:
        xm = x.reshape(n, c, -1)
        gm = g.reshape(n, co, -1)
        gw = np.einsum("nop,ncp->oc", gm, xm).reshape(w.shape)
        gx = (w.reshape(co, c).T @ gm).reshape(x.shape) if need_x else None
        return gx, gw
    pad = k // 2
    kk = k**nd
    wall_t = w.transpose(tuple(range(2, 2 + nd)) + (1, 0)).reshape(kk * c, co)
    gw_taps = np.zeros((kk, co, c), dtype=np.float64)
    gxs = []
    per_item = kk * max(c, co) * int(np.prod([s + 2 * pad for s in spatial]))
    for sl in _chunks(n, per_item):
        f, padded = _padded_flat(x[sl], pad)
        gp, _ = _padded_flat(g[sl], pad)
        m = f.shape[1]
        offs = _offsets(nd, k, _flat_strides(padded))
        m0 = max(abs(d) for d in offs)
        length = m - 2 * m0
        gmid = gp[:, m0 : m0 + length]
        for i, d in enumerate(offs):
            gw_taps[i] += gmid @ f[:, m0 + d : m0 + d + length].T
        if need_x:
            z = (wall_t @ gp).reshape(kk, c, m)
            acc = np.zeros((c, m), dtype=x.dtype)
            for i, d in enumerate(offs):
                acc[:, m0 : m0 + length] += z[i, :, m0 - d : m0 - d + length]
            gxs.append(_unpad_flat(acc, sl.stop - sl.start, padded, pad))
    gw = gw_taps.reshape((k,) * nd + (co, c)).transpose((nd, nd + 1) + tuple(range(nd)))
    gx = None
    if need_x:
        gx = np.concatenate(gxs, axis=0) if len(gxs) > 1 else gxs[0]
    return gx, np.ascontiguousarray(gw).astype(w.dtype)


def conv(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation with 'same' zero padding (2D or 3D).

    x: (N, Cin, *S); w: (Cout, Cin, k, ..., k) with k in {1, 3}.
    """
    nd = x.ndim - 2
    if nd not in (2, 3) or w.ndim != nd + 2:
        raise ValueError(f"conv expects 2D/3D input and matching weight, got {x.shape} and {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ValueError(f"conv channel mismatch: input {x.shape} vs weight {w.shape}")
    k = w.shape[2]
    if k not in (1, 3) or any(s != k for s in w.shape[2:]):
        raise ValueError(f"conv kernel must be 1 or 3 per axis, got weight {w.shape}")
    out = _conv_fwd(x.data, w.data)
    if b is not None:
        out += b.data.reshape((1, -1) + (1,) * nd)
    op = f"conv{nd}d"

    def bw(g):
        gx, gw = _conv_bwd(x.data, w.data, g, x.requires_grad)
        if b is None:
            return gx, gw
        gb = g.sum(axis=(0,) + tuple(range(2, g.ndim)), dtype=np.float64).astype(b.dtype)
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, bw, op)


def conv_transpose(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Kernel-2 stride-2 transpose convolution; doubles every spatial axis.

    x: (N, Cin, *S); w: (Cin, Cout, 2, ..., 2).
    """
    nd = x.ndim - 2
    if w.ndim != nd + 2 or w.shape[0] != x.shape[1] or any(s != 2 for s in w.shape[2:]):
        raise ValueError(f"conv_transpose shape mismatch: input {x.shape} vs weight {w.shape}")
    n, ci = x.shape[:2]
    co = w.shape[1]
    spatial = x.shape[2:]
    kk = 2**nd
    wm = w.data.reshape(ci, co * kk)
    xm = x.data.reshape(n, ci, -1).transpose(0, 2, 1)  # (N, P, Cin)
    y = xm @ wm  # (N, P, Cout*kk)
    y = y.reshape((n,) + spatial + (co,) + (2,) * nd)
    # (N, Cout, S0, 2, S1, 2, ...)
    perm = (0, nd + 1) + tuple(itertools.chain.from_iterable((1 + i, nd + 2 + i) for i in range(nd)))
    out_shape = (n, co) + tuple(2 * s for s in spatial)
    out = np.ascontiguousarray(y.transpose(perm)).reshape(out_shape)
    if b is not None:
        out += b.data.reshape((1, -1) + (1,) * nd)
    inv = np.argsort(perm)

    def bw(g):
        gy = g.reshape((n, co) + tuple(itertools.chain.from_iterable((s, 2) for s in spatial)))
        gy = np.ascontiguousarray(gy.transpose(inv)).reshape(n, -1, co * kk)  # (N, P, Cout*kk)
        gx = None
        if x.requires_grad:
            gx = (gy @ wm.T).transpose(0, 2, 1).reshape(x.shape)
        gw = np.einsum("npi,npo->io", xm, gy).reshape(w.shape)
        if b is None:
            return gx, gw
        gb = g.sum(axis=(0,) + tuple(range(2, g.ndim)))
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, bw, f"conv_transpose{nd}d")


def _windows(x: np.ndarray) -> np.ndarray:
    """(N, C, *S) -> (N, C, *S/2, 2**nd) with the window in scan order."""
    nd = x.ndim - 2
    n, c = x.shape[:2]
    spatial = x.shape[2:]
    if any(s % 2 for s in spatial):
        raise ValueError(f"pooling needs even spatial dims, got {x.shape}")
    split = (n, c) + tuple(itertools.chain.from_iterable((s // 2, 2) for s in spatial))
    v = x.reshape(split)
    perm = (0, 1) + tuple(2 + 2 * i for i in range(nd)) + tuple(3 + 2 * i for i in range(nd))
    return v.transpose(perm).reshape((n, c) + tuple(s // 2 for s in spatial) + (2**nd,)), perm, split


def max_pool(x: Tensor) -> Tensor:
    """2-per-axis max pooling; ties go to the first element in scan order."""
    win, perm, split = _windows(x.data)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    inv = np.argsort(perm)

    def bw(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        nd = x.ndim - 2
        gw = gw.reshape(win.shape[:-1] + (2,) * nd)
        return (np.ascontiguousarray(gw.transpose(inv)).reshape(x.shape),)

    return _node(np.ascontiguousarray(out), (x,), bw, f"max_pool{x.ndim - 2}d")


def avg_pool(x: Tensor) -> Tensor:
    win, perm, split = _windows(x.data)
    kk = win.shape[-1]
    out = win.mean(axis=-1)
    inv = np.argsort(perm)

    def bw(g):
        nd = x.ndim - 2
        gw = np.broadcast_to((g / kk)[..., None], win.shape).reshape(win.shape[:-1] + (2,) * nd)
        return (np.ascontiguousarray(gw.transpose(inv)).reshape(x.shape),)

    return _node(np.ascontiguousarray(out), (x,), bw, f"avg_pool{x.ndim - 2}d")
