import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxinpaint import nn
from voxinpaint.damage import DamageConfig, synth_damage
from voxinpaint.nn import Tensor
from voxinpaint.nn.gradcheck import check_gradients
from voxinpaint.stage1 import (
    IMAGENET_MEAN, MaskNetConfig, MaskUNet2D, aggregate_mask, augment_slice, build_slice_rows, coarse_indicator,
    extract_slices, load_stage1, predict_slice, predict_volume_mask, standardize_rgb, train_stage1,
    transform_slice, unstandardize_rgb, validation_bce,
)
from voxinpaint.voxel import RES, generate_procedural_shape

TINY = MaskNetConfig(levels=2, base_channels=4, batch=8, lr=1e-3)


def sample(kind="vase", shape_seed=1, damage_seed=0, **kw):
    v, c = generate_procedural_shape(kind, shape_seed)
    return synth_damage(v, c, DamageConfig(seed=damage_seed, **kw), source_id=f"{kind}_{shape_seed}")


# ------------------------------------------------------------------ slices

def test_extract_slices_rows_and_targets():
    s = sample()
    ind = coarse_indicator(s.mask, 0.0, 0)
    rows = extract_slices(s, ind)
    assert rows.inputs.shape == (RES, 4, RES, RES) and rows.targets.shape == (RES, 1, RES, RES)
    assert np.array_equal(rows.slice_index, np.arange(RES))
    assert np.array_equal(rows.targets[:, 0].astype(np.uint8), s.mask)
    raw = extract_slices(s, ind, standardize=False)
    assert np.array_equal(raw.inputs[:, :3], s.c_dam.transpose(1, 0, 2, 3))
    assert np.array_equal(raw.inputs[:, 3], ind)


def test_undamaged_sample_has_zero_targets():
    s = sample(erosion_radius=0, enable_holes=False)
    rows = extract_slices(s, coarse_indicator(s.mask, 0.3, 1))
    assert rows.targets.sum() == 0 and rows.inputs[:, 3].sum() == 0


def test_indicator_covers_mask_without_dropout():
    s = sample()
    ind = coarse_indicator(s.mask, 0.0, 0)
    assert np.all(ind >= s.mask)
    dropped = coarse_indicator(s.mask, 0.3, 0)
    assert np.all(dropped <= ind) and dropped.sum() < ind.sum()
    assert np.array_equal(dropped, coarse_indicator(s.mask, 0.3, 0))


def test_standardize_round_trip(rng):
    x = rng.random((5, 4, 8, 8)).astype(np.float32)
    back = unstandardize_rgb(standardize_rgb(x))
    assert np.max(np.abs(back - x)) < 1e-6
    mean_px = np.broadcast_to(IMAGENET_MEAN[:, None, None], (3, 2, 2))
    flat = np.concatenate([mean_px, np.ones((1, 2, 2), np.float32)])
    out = standardize_rgb(flat)
    assert np.max(np.abs(out[:3])) < 1e-6 and np.all(out[3] == 1)


# ------------------------------------------------------------------ augmentation

def test_identity_transform(rng):
    x = rng.random((4, 16, 16)).astype(np.float32)
    y = (rng.random((1, 16, 16)) < 0.5).astype(np.float32)
    xo, yo = transform_slice(x, y, False, False, 0.0)
    assert np.array_equal(xo, x) and np.array_equal(yo, y)


def test_double_flip_is_identity(rng):
    x = rng.random((4, 16, 16)).astype(np.float32)
    y = (rng.random((1, 16, 16)) < 0.5).astype(np.float32)
    for fh, fv in [(True, False), (False, True), (True, True)]:
        x1, y1 = transform_slice(x, y, fh, fv, 0.0)
        x2, y2 = transform_slice(x1, y1, fh, fv, 0.0)
        assert np.array_equal(x2, x) and np.array_equal(y2, y)


def test_flip_moves_input_and_target_together(rng):
    x = np.zeros((4, 8, 8), np.float32)
    y = np.zeros((1, 8, 8), np.float32)
    x[:, 2, 1] = 1
    y[0, 2, 1] = 1
    xo, yo = transform_slice(x, y, True, False, 0.0)
    assert xo[0, 2, 6] == 1 and yo[0, 2, 6] == 1


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40)
def test_augmented_targets_stay_binary(seed):
    r = np.random.default_rng(seed)
    x = r.random((4, 32, 32)).astype(np.float32)
    x[3] = (r.random((32, 32)) < 0.3)
    y = (r.random((1, 32, 32)) < 0.3).astype(np.float32)
    xo, yo = augment_slice(x, y, seed)
    assert set(np.unique(yo)) <= {0.0, 1.0}
    assert set(np.unique(xo[3])) <= {0.0, 1.0}
    assert xo[:3].min() >= 0 and xo[:3].max() <= 1
    xa, ya = augment_slice(x, y, seed)
    assert np.array_equal(xa, xo) and np.array_equal(ya, yo)


def test_rotation_fills_corners_with_zero():
    x = np.ones((4, 32, 32), np.float32)
    y = np.ones((1, 32, 32), np.float32)
    xo, yo = transform_slice(x, y, False, False, 15.0)
    assert yo[0, 0, 0] == 0 and xo[3, 0, 0] == 0 and yo[0, 16, 16] == 1


# ------------------------------------------------------------------ network

def test_predict_slice_range_and_shape(rng):
    model = MaskUNet2D(TINY, seed=0)
    p = predict_slice(model, rng.standard_normal((4, RES, RES)).astype(np.float32))
    assert p.shape == (1, RES, RES) and p.min() >= 0 and p.max() <= 1
    pb = predict_slice(model, rng.standard_normal((3, 4, RES, RES)).astype(np.float32))
    assert pb.shape == (3, 1, RES, RES)


def test_untrained_output_is_near_half():
    s = sample()
    model = MaskUNet2D(MaskNetConfig(), seed=0)
    rows = extract_slices(s, coarse_indicator(s.mask, 0.3, 0)).inputs
    p = predict_slice(model, rows[14:16])
    # zero head bias and a down-scaled head keep logits within about +-0.6
    assert abs(p.mean() - 0.5) < 0.15
    assert p.min() > 0.15 and p.max() < 0.85


def test_network_rejects_bad_rank():
    with pytest.raises(ValueError):
        MaskUNet2D(TINY)(Tensor(np.zeros((4, 8, 8), np.float32)))


def test_init_is_seeded():
    a, b = MaskUNet2D(TINY, seed=3), MaskUNet2D(TINY, seed=3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    c = MaskUNet2D(TINY, seed=4)
    assert not np.array_equal(a.parameters()[0].data, c.parameters()[0].data)


@pytest.mark.parametrize("seed", range(5))
def test_mask_net_gradients(seed):
    r = np.random.default_rng(seed)
    model = MaskUNet2D(MaskNetConfig(levels=2, base_channels=2), seed=seed, dtype=np.float64)
    for name, p in model.named_parameters():
        if name.endswith("bias"):  # zero biases put dead pixels exactly on the relu kink
            p.data[...] = r.normal(0, 0.1, p.data.shape)
    x = Tensor(r.standard_normal((2, 4, 8, 8)), requires_grad=True)
    y = (r.random((2, 1, 8, 8)) < 0.4).astype(np.float64)
    errs = check_gradients(lambda: nn.bce_loss(nn.sigmoid(model(x)), y), model.parameters() + [x],
                           step=1e-5, max_entries=24, seed=seed)
    assert max(errs) < 1e-3, errs


# ------------------------------------------------------------------ aggregation

def test_aggregate_empty_stays_empty():
    assert aggregate_mask(np.zeros((RES, RES, RES))).sum() == 0


def test_aggregate_keeps_isolated_voxel():
    m = np.zeros((8, 8, 8), np.uint8)
    m[4, 4, 4] = 1
    assert aggregate_mask(m)[4, 4, 4] == 1


def test_aggregate_fills_single_slice_gap():
    m = np.zeros((10, 10, 10), np.uint8)
    m[2:4, 3:7, 3:7] = 1
    m[5:8, 3:7, 3:7] = 1
    out = aggregate_mask(m)
    assert out[4, 3:7, 3:7].all()


def test_aggregate_rejects_wrong_rank():
    with pytest.raises(ValueError):
        aggregate_mask(np.zeros((4, 4)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_aggregate_is_extensive_and_monotone(seed):
    r = np.random.default_rng(seed)
    a = (r.random((10, 10, 10)) < 0.2).astype(np.uint8)
    b = a | (r.random(a.shape) < 0.2).astype(np.uint8)
    assert np.all(aggregate_mask(a) >= a)
    assert np.all(aggregate_mask(a) <= aggregate_mask(b))


def test_predict_volume_mask_is_binary():
    s = sample()
    model = MaskUNet2D(TINY, seed=0)
    m = predict_volume_mask(model, s, coarse_indicator(s.mask, 0.3, 0))
    assert m.shape == s.mask.shape and m.dtype == np.uint8 and set(np.unique(m)) <= {0, 1}


# ------------------------------------------------------------------ training

@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("stage1")
    train = [sample("vase", 1, 0), sample("sphere", 2, 1)]
    val = [sample("box_with_pattern", 3, 2)]
    res = train_stage1(train, val, TINY, seed=0, epochs=5, out_dir=out, augment=False)
    return res, val, out


def test_training_decreases_loss(tiny_run):
    res, _, _ = tiny_run
    bce = [e.train_bce for e in res.log]
    assert len(bce) == 5 and bce[-1] < bce[0]
    assert res.best_val == min(e.val_bce for e in res.log)
    assert res.log[res.best_epoch - 1].val_bce == res.best_val


def test_checkpoint_reload_reproduces_validation(tiny_run):
    res, val, out = tiny_run
    rows = build_slice_rows(val, 0, "val", 0, TINY.indicator_dropout)
    model = load_stage1(out / "best.vckpt")
    assert model.cfg.levels == 2 and model.cfg.base_channels == 4
    assert validation_bce(model, rows, TINY.batch) == pytest.approx(res.best_val, abs=1e-7)
    assert (out / "log.csv").read_text().splitlines()[0] == "epoch,train_bce,val_bce,lr"


def test_training_is_deterministic(tiny_run):
    res, val, _ = tiny_run
    train = [sample("vase", 1, 0), sample("sphere", 2, 1)]
    again = train_stage1(train, val, TINY, seed=0, epochs=2, augment=False)
    assert [e.train_bce for e in again.log] == [e.train_bce for e in res.log[:2]]


def test_load_rejects_foreign_checkpoint(tmp_path):
    from voxinpaint.nn import checkpoint as ckpt
    ckpt.save(tmp_path / "x.vckpt", "SomethingElse", {"w": np.zeros(2, np.float32)})
    with pytest.raises(ValueError, match="UNet2DColor"):
        load_stage1(tmp_path / "x.vckpt")
