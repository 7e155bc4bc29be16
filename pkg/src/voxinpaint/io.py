"""Wavefront OBJ ingest and the VVOL1 volume format.

VVOL1 layout::

    VVOL1
    dims <nx> <ny> <nz>
    channels <1|3>
    dtype <u8|f32>
    encoding raw-le
    <blank line>
    <raw little-endian payload, x fastest, then y, z, channel>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .voxel import TriangleMesh

VVOL_MAGIC = b"VVOL1\n"
_DTYPES = {"u8": np.dtype("u1"), "f32": np.dtype("<f4")}


def read_obj(path) -> TriangleMesh:
    """Parse ``v`` (optionally with trailing RGB) and ``f`` records; polygons are fan-triangulated."""
    verts: list[list[float]] = []
    colors: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                vals = [float(p) for p in parts[1:]]
                if len(vals) not in (3, 4, 6, 7):
                    raise ValueError(f"{path}:{lineno}: malformed vertex record")
                verts.append(vals[:3])
                if len(vals) >= 6:
                    colors.append(vals[-3:])
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError(f"{path}:{lineno}: face needs at least 3 vertices")
                for k in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[k], idx[k + 1]))
    if colors and len(colors) != len(verts):
        raise ValueError(f"{path}: vertex colors present on only some vertices")
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(tris, dtype=np.int64).reshape(-1, 3),
                        np.array(colors) if colors else None)


def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, v in enumerate(mesh.vertices):
            if mesh.colors is not None:
                c = mesh.colors[i]
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g} {c[0]:.6g} {c[1]:.6g} {c[2]:.6g}\n")
            else:
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def encode_vvol(arr: np.ndarray) -> bytes:
    """Occupancy (R, R, R) is stored as u8; color (3, R, R, R) as f32."""
    arr = np.asarray(arr)
    if arr.ndim == 3:
        channels, dtype = 1, "u8"
        payload = arr.astype("u1")
    elif arr.ndim == 4 and arr.shape[0] == 3:
        channels, dtype = 3, "f32"
        payload = arr.astype("<f4")
    else:
        raise ValueError(f"cannot store array of shape {arr.shape} as VVOL1")
    nz, ny, nx = arr.shape[-3:]
    header = (
        f"dims {nx} {ny} {nz}\nchannels {channels}\ndtype {dtype}\nencoding raw-le\n\n"
    ).encode("ascii")
    return VVOL_MAGIC + header + np.ascontiguousarray(payload).tobytes()


def decode_vvol(blob: bytes) -> np.ndarray:
    if not blob.startswith(VVOL_MAGIC):
        raise ValueError("not a VVOL1 file (bad magic)")
    end = blob.find(b"\n\n", len(VVOL_MAGIC) - 1)
    if end < 0:
        raise ValueError("VVOL1 header not terminated by a blank line")
    fields = {}
    for line in blob[len(VVOL_MAGIC):end].decode("ascii").splitlines():
        key, _, value = line.partition(" ")
        fields[key] = value.strip()
    try:
        nx, ny, nz = (int(v) for v in fields["dims"].split())
        channels = int(fields["channels"])
        dtype = _DTYPES[fields["dtype"]]
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad VVOL1 header: {fields}") from exc
    if fields.get("encoding") != "raw-le":
        raise ValueError(f"unsupported VVOL1 encoding {fields.get('encoding')!r}")
    payload = blob[end + 2:]
    shape = (nz, ny, nx) if channels == 1 else (channels, nz, ny, nx)
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise ValueError(f"VVOL1 payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(np.uint8 if channels == 1 else np.float32)


def write_vvol(path, arr: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_vvol(arr))


def read_vvol(path) -> np.ndarray:
    return decode_vvol(Path(path).read_bytes())
