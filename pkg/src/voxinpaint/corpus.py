"""Dataset manifests and artifact loading.

A manifest is a CSV with columns ``source_id,source,split``.  ``source`` is
either ``procedural:<kind>:<seed>``, a path to an OBJ mesh, or a directory
holding ``occupancy.vvol`` and ``color.vvol``.  Relative paths resolve against
the manifest's directory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import io, voxel

SPLITS = ("train", "val", "test")
HEADER = ["source_id", "source", "split"]


class ManifestError(ValueError):
    pass


@dataclass
class Artifact:
    """An intact object: ground-truth occupancy and color."""

    source_id: str
    v_gt: np.ndarray
    c_gt: np.ndarray


@dataclass(frozen=True)
class ManifestEntry:
    source_id: str
    source: str
    split: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    base_dir: Path = Path(".")

    def validate(self, require_splits: tuple[str, ...] = ()) -> None:
        seen = set()
        for e in self.entries:
            if not e.source_id or "/" in e.source_id or e.source_id in (".", ".."):
                raise ManifestError(f"invalid source_id '{e.source_id}'")
            if e.source_id in seen:
                raise ManifestError(f"duplicate source_id '{e.source_id}'")
            seen.add(e.source_id)
            if e.split not in SPLITS:
                raise ManifestError(f"{e.source_id}: split must be one of {SPLITS}, got '{e.split}'")
            if e.source.startswith("procedural:"):
                parse_procedural(e.source)
        for split in require_splits:
            if not self.split(split):
                raise ManifestError(f"manifest has no '{split}' entries")

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


def parse_procedural(source: str) -> tuple[str, int]:
    parts = source.split(":")
    if len(parts) != 3 or parts[1] not in voxel.SHAPE_KINDS:
        raise ManifestError(f"bad procedural source '{source}', expected procedural:<kind>:<seed> "
                            f"with kind in {voxel.SHAPE_KINDS}")
    try:
        return parts[1], int(parts[2])
    except ValueError:
        raise ManifestError(f"bad procedural seed in '{source}'") from None


def read_manifest(path) -> Manifest:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != HEADER:
        raise ManifestError(f"{path}: header must be {','.join(HEADER)}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        entries.append(ManifestEntry(*(c.strip() for c in row)))
    manifest = Manifest(entries, path.parent)
    manifest.validate()
    return manifest


def write_manifest(path, manifest: Manifest) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for e in manifest.entries:
            w.writerow([e.source_id, e.source, e.split])


def default_manifest_path() -> Path:
    return Path(str(resources.files("voxinpaint") / "data" / "procedural_manifest.csv"))


def default_manifest() -> Manifest:
    return read_manifest(default_manifest_path())


def load_artifact(entry: ManifestEntry, base_dir=Path(".")) -> Artifact:
    """Voxelize or generate the ground-truth pair for one manifest entry."""
    if entry.source.startswith("procedural:"):
        kind, seed = parse_procedural(entry.source)
        v, c = voxel.generate_procedural_shape(kind, seed)
        return Artifact(entry.source_id, v, c)
    path = Path(entry.source)
    if not path.is_absolute():
        path = Path(base_dir) / path
    if path.is_dir():
        v = io.read_vvol(path / "occupancy.vvol")
        c = io.read_vvol(path / "color.vvol").astype(np.float32)
        voxel.check_grid(v)
        voxel.check_color(c, v)
        return Artifact(entry.source_id, v, c)
    if path.suffix.lower() == ".obj":
        vox = voxel.voxelize(voxel.normalize_mesh(io.read_obj(path)))
        return Artifact(entry.source_id, vox.occupancy, vox.color)
    raise ManifestError(f"{entry.source_id}: unsupported source '{entry.source}'")
