import hashlib
import inspect
from pathlib import Path

import numpy as np
import pytest

import voxinpaint
from voxinpaint import corpus, io as vio, seeding
from voxinpaint.corpus import Manifest, ManifestEntry, ManifestError
from voxinpaint.voxel import TriangleMesh, generate_procedural_shape

import oracles


# ------------------------------------------------------------------ manifests

def test_default_manifest_has_16_4_3_split():
    m = corpus.default_manifest()
    m.validate(require_splits=corpus.SPLITS)
    assert [len(m.split(s)) for s in corpus.SPLITS] == [16, 4, 3]
    kinds = {corpus.parse_procedural(e.source)[0] for e in m.entries}
    assert kinds == {"sphere", "vase", "box_with_pattern"}


def test_default_manifest_splits_are_object_level():
    m = corpus.default_manifest()
    sources = [e.source for e in m.entries]
    assert len(set(sources)) == len(sources)


def test_manifest_round_trip(tmp_path):
    m = Manifest([ManifestEntry("a", "procedural:vase:3", "train"), ManifestEntry("b", "mesh.obj", "test")])
    path = tmp_path / "m.csv"
    corpus.write_manifest(path, m)
    back = corpus.read_manifest(path)
    assert back.entries == m.entries and back.base_dir == tmp_path


@pytest.mark.parametrize("rows,match", [
    ("id,source,split\n", "header"),
    ("source_id,source,split\na,procedural:vase:1,train\na,procedural:vase:2,val\n", "duplicate"),
    ("source_id,source,split\na,procedural:vase:1,holdout\n", "split"),
    ("source_id,source,split\na,procedural:teapot:1,train\n", "procedural"),
    ("source_id,source,split\na,procedural:vase:x,train\n", "seed"),
    ("source_id,source,split\na/b,procedural:vase:1,train\n", "source_id"),
    ("source_id,source,split\na,procedural:vase:1\n", "columns"),
])
def test_manifest_violations(tmp_path, rows, match):
    path = tmp_path / "m.csv"
    path.write_text(rows)
    with pytest.raises(ManifestError, match=match):
        corpus.read_manifest(path)


def test_missing_split_is_rejected_for_training():
    m = Manifest([ManifestEntry("a", "procedural:vase:1", "train")])
    with pytest.raises(ManifestError, match="val"):
        m.validate(require_splits=corpus.SPLITS)


def test_load_artifact_sources(tmp_path):
    proc = corpus.load_artifact(ManifestEntry("p", "procedural:sphere:7", "train"))
    v, c = generate_procedural_shape("sphere", 7)
    assert np.array_equal(proc.v_gt, v) and np.array_equal(proc.c_gt, c)

    d = tmp_path / "vol"
    vio.write_vvol(d / "occupancy.vvol", v)
    vio.write_vvol(d / "color.vvol", c)
    from_dir = corpus.load_artifact(ManifestEntry("d", "vol", "train"), tmp_path)
    assert np.array_equal(from_dir.v_gt, v) and np.array_equal(from_dir.c_gt, c)

    verts, tris = oracles.box_mesh((0, 0, 0), (4, 2, 2))
    vio.write_obj(tmp_path / "box.obj", TriangleMesh(verts, tris))
    mesh = corpus.load_artifact(ManifestEntry("m", "box.obj", "test"), tmp_path)
    assert mesh.v_gt.sum() > 0 and np.all(mesh.c_gt[:, mesh.v_gt == 0] == 0)

    with pytest.raises(ManifestError, match="unsupported"):
        corpus.load_artifact(ManifestEntry("x", "notes.txt", "train"), tmp_path)


# ------------------------------------------------------------------ seeding

def test_same_tuple_same_seed():
    assert seeding.derive_seed(3, "stage2-noise", 4, "vase_01") == seeding.derive_seed(3, "stage2-noise", 4, "vase_01")
    assert 0 <= seeding.derive_seed(0, "x") < 2**63


def test_seed_is_stable_across_platforms():
    # pinned value: blake2b-64 of the canonical tuple encoding, folded to 63 bits
    assert seeding.derive_seed(0, "stage1-init", 0, "") == seeding.derive_seed(0, "stage1-init")
    assert seeding.derive_seed(1, "a", 2, "b") == 0x7FFFFFFFFFFFFFFF & int.from_bytes(
        hashlib.blake2b(b"1\x1fa\x1f2\x1fb", digest_size=8).digest(), "little")


def test_each_field_changes_the_seed():
    base = (7, "eval-damage", 3, "item")
    ref = seeding.derive_seed(*base)
    for i, alt in enumerate([8, "eval-damagf", 4, "iten"]):
        t = list(base)
        t[i] = alt
        assert seeding.derive_seed(*t) != ref


def test_no_collisions_over_a_million_tuples():
    seen = set()
    tags = ("stage1-aug", "stage2-noise", "eval-damage", "inpaint")
    n = 0
    for root in range(10):
        for tag in tags:
            for epoch in range(50):
                for item in range(500):
                    seen.add(seeding.derive_seed(root, tag, epoch, item))
                    n += 1
    assert n == 1_000_000
    assert len(seen) == n


def test_no_global_rng_usage():
    root = Path(voxinpaint.__file__).parent
    for path in root.rglob("*.py"):
        text = path.read_text()
        assert "np.random.seed" not in text and "np.random.rand(" not in text, path
        assert "import random" not in text, path


def test_rng_for_matches_derived_seed():
    a = seeding.rng_for(1, "t", 2, "x").random(4)
    b = np.random.default_rng(seeding.derive_seed(1, "t", 2, "x")).random(4)
    assert np.array_equal(a, b)
    assert "root_seed" in inspect.signature(seeding.rng_for).parameters
