"""VCKPT1 checkpoint files.

Layout (all integers little-endian u32)::

    b"VCKPT1\\n"
    len(model_name), model_name (utf-8)
    entry count
    per entry: len(name), name, rank, dims..., raw little-endian f32 payload

Optimizer buffers live under ``opt/`` names, scheduler scalars under ``sched/``
and architecture hyperparameters under ``meta/``.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .layers import Module
from .optim import Adam, PlateauSchedulerState

MAGIC = b"VCKPT1\n"


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _write_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(_u32(len(raw)))
    buf.write(raw)


def dumps(model_name: str, entries: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    _write_str(buf, model_name)
    buf.write(_u32(len(entries)))
    for name, arr in entries.items():
        a = np.asarray(arr, dtype="<f4")
        _write_str(buf, name)
        buf.write(_u32(a.ndim))
        for d in a.shape:
            buf.write(_u32(d))
        buf.write(np.ascontiguousarray(a).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[str, dict[str, np.ndarray]]:
    view = memoryview(blob)
    if bytes(view[: len(MAGIC)]) != MAGIC:
        raise ValueError("not a VCKPT1 checkpoint (bad magic)")
    pos = len(MAGIC)

    def u32() -> int:
        nonlocal pos
        (n,) = struct.unpack_from("<I", view, pos)
        pos += 4
        return n

    def text() -> str:
        nonlocal pos
        n = u32()
        s = bytes(view[pos : pos + n]).decode("utf-8")
        pos += n
        return s

    model_name = text()
    entries: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        name = text()
        rank = u32()
        dims = tuple(u32() for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        nbytes = 4 * count
        if pos + nbytes > len(view):
            raise ValueError(f"truncated checkpoint payload for '{name}'")
        entries[name] = np.frombuffer(view[pos : pos + nbytes], dtype="<f4").reshape(dims).astype(np.float32)
        pos += nbytes
    if pos != len(view):
        raise ValueError("trailing bytes after checkpoint entries")
    return model_name, entries


def save(path, model_name: str, entries: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(model_name, entries))


def load(path) -> tuple[str, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())


def training_state(model: Module, opt: Adam | None = None,
                   sched: PlateauSchedulerState | None = None) -> dict[str, np.ndarray]:
    """Flatten model weights plus optional optimizer/scheduler state."""
    entries = dict(model.state_dict())
    if opt is not None:
        for name, p in model.named_parameters():
            entries[f"opt/{name}/m"] = p.m
            entries[f"opt/{name}/v"] = p.v
        entries["opt/step"] = np.asarray(opt.step_count, dtype=np.float32)
        entries["opt/lr"] = np.asarray(opt.lr, dtype=np.float32)
    if sched is not None:
        entries["sched/best_metric"] = np.asarray(min(sched.best_metric, np.finfo(np.float32).max), dtype=np.float32)
        entries["sched/epochs_since_improvement"] = np.asarray(sched.epochs_since_improvement, dtype=np.float32)
    return entries


def restore(model: Module, entries: dict[str, np.ndarray], opt: Adam | None = None) -> None:
    model.load_state_dict({k: v for k, v in entries.items() if not k.startswith(("opt/", "sched/", "meta/"))})
    if opt is not None and "opt/step" in entries:
        for name, p in model.named_parameters():
            p.m = entries[f"opt/{name}/m"].astype(p.dtype)
            p.v = entries[f"opt/{name}/v"].astype(p.dtype)
        opt.step_count = int(entries["opt/step"])
        opt.set_lr(float(entries["opt/lr"]))
