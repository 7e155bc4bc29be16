import numpy as np
import pytest
from hypothesis import given, strategies as st

from voxinpaint import nn
from voxinpaint.nn import checkpoint as ckpt
from voxinpaint.nn import Parameter, PlateauSchedulerState, plateau_step


# ------------------------------------------------------------------ Adam

def test_adam_config_validation():
    with pytest.raises(ValueError):
        nn.AdamConfig(lr=0.0)
    with pytest.raises(ValueError):
        nn.AdamConfig(lr=1e-3, beta1=1.0)
    with pytest.raises(ValueError):
        nn.AdamConfig(lr=1e-3, beta2=-0.1)


def test_zero_gradient_leaves_parameters_unchanged():
    p = Parameter(np.array([1.5, -2.0]))
    p.grad = np.zeros(2)
    nn.adam_step([p], nn.AdamConfig(lr=0.1), 1)
    assert p.data.tolist() == [1.5, -2.0]


def test_missing_gradient_is_skipped():
    p = Parameter(np.array([1.0]))
    nn.adam_step([p], nn.AdamConfig(lr=0.1), 1)
    assert p.data.tolist() == [1.0]


def test_one_step_moves_by_lr():
    p = Parameter(np.array([0.0]))
    p.grad = np.array([1.0])
    cfg = nn.AdamConfig(lr=1e-3)
    nn.adam_step([p], cfg, 1)
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert abs(p.data[0] + 1e-3 / (1 + 1e-8)) < 1e-12


@given(st.floats(1e-3, 1e3), st.floats(1e-5, 1e-1))
def test_first_step_magnitude_is_lr_for_any_constant_gradient(g, lr):
    p = Parameter(np.array([0.0]))
    p.grad = np.array([g])
    nn.adam_step([p], nn.AdamConfig(lr=lr), 1)
    assert abs(abs(p.data[0]) - lr) < lr * 1e-4


def _trajectory(seed):
    r = np.random.default_rng(seed)
    layer = nn.Conv(2, 3, ndim=2, rng=r)
    opt = nn.Adam(layer.parameters(), nn.AdamConfig(lr=1e-2))
    x = nn.Tensor(r.standard_normal((2, 2, 6, 6)).astype(np.float32))
    target = r.standard_normal((2, 3, 6, 6)).astype(np.float32)
    for _ in range(5):
        opt.zero_grad()
        nn.backward(nn.mse_loss(layer(x), target))
        opt.step()
    return [p.data.copy() for p in layer.parameters()]


def test_identical_runs_are_bit_identical():
    a, b = _trajectory(3), _trajectory(3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_adam_descends_on_quadratic():
    p = Parameter(np.array([3.0, -4.0]))
    opt = nn.Adam([p], nn.AdamConfig(lr=0.1))
    for _ in range(200):
        opt.zero_grad()
        nn.backward(nn.mse_loss(p, np.zeros(2)))
        opt.step()
    assert np.abs(p.data).max() < 0.1


def test_set_lr():
    opt = nn.Adam([], nn.AdamConfig(lr=1e-3, beta1=0.8))
    opt.set_lr(5e-4)
    assert opt.lr == 5e-4 and opt.cfg.beta1 == 0.8


# ------------------------------------------------------------------ plateau scheduler

def _trace(metrics, state=None):
    state = state or PlateauSchedulerState()
    lr, lrs = 1.0, []
    for m in metrics:
        state, mult = plateau_step(state, m)
        lr *= mult
        lrs.append(lr)
    return lrs


def test_improving_metrics_never_change_lr():
    assert _trace([10 - i for i in range(30)]) == [1.0] * 30


def test_flat_metric_halves_once_at_epoch_six():
    lrs = _trace([1.0] * 6)
    # first epoch sets the best; epochs 2-6 are five non-improving epochs
    assert lrs == [1.0] * 5 + [0.5]


def test_two_plateaus_quarter_the_lr():
    lrs = _trace([1.0] * 11)
    assert lrs[-1] == 0.25
    assert lrs.count(0.5) == 5


def test_improvement_resets_counter():
    lrs = _trace([5, 5, 5, 5, 4, 4, 4, 4, 4, 4])
    assert lrs[:9] == [1.0] * 9 and lrs[9] == 0.5


def test_scheduler_state_validation():
    with pytest.raises(ValueError):
        PlateauSchedulerState(factor=1.0)
    with pytest.raises(ValueError):
        PlateauSchedulerState(patience=-1)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=40))
def test_lr_multiplier_is_one_or_factor(metrics):
    state = PlateauSchedulerState()
    for m in metrics:
        state, mult = plateau_step(state, m)
        assert mult in (1.0, 0.5)
        assert 0 <= state.epochs_since_improvement < state.patience


# ------------------------------------------------------------------ checkpoint

def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    entries = {
        "a.weight": rng.standard_normal((3, 2, 3, 3)).astype(np.float32),
        "scalar": np.asarray(2.5, dtype=np.float32),
        "empty": np.zeros((0, 4), dtype=np.float32),
        "unicode/名前": np.array([np.float32(1e-38), np.float32(-0.0)]),
    }
    path = tmp_path / "m.vckpt"
    ckpt.save(path, "Model", entries)
    name, back = ckpt.load(path)
    assert name == "Model"
    assert list(back) == list(entries)
    for k in entries:
        assert back[k].shape == entries[k].shape
        assert back[k].tobytes() == entries[k].tobytes()
    assert ckpt.dumps(name, back) == path.read_bytes()


def test_checkpoint_layout(rng):
    blob = ckpt.dumps("M", {"w": np.array([1.0, 2.0], dtype=np.float32)})
    assert blob.startswith(b"VCKPT1\n")
    expected = (b"VCKPT1\n" + (1).to_bytes(4, "little") + b"M" + (1).to_bytes(4, "little")
                + (1).to_bytes(4, "little") + b"w" + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                + np.array([1.0, 2.0], dtype="<f4").tobytes())
    assert blob == expected


def test_checkpoint_rejects_corruption():
    blob = ckpt.dumps("M", {"w": np.ones(4, dtype=np.float32)})
    with pytest.raises(ValueError, match="magic"):
        ckpt.loads(b"XXXXXX\n" + blob[7:])
    with pytest.raises(ValueError, match="truncated"):
        ckpt.loads(blob[:-2])
    with pytest.raises(ValueError, match="trailing"):
        ckpt.loads(blob + b"\0")


def test_training_state_restores_model_and_optimizer(rng):
    layer = nn.Conv(2, 2, ndim=2, rng=rng)
    opt = nn.Adam(layer.parameters(), nn.AdamConfig(lr=1e-2))
    x = nn.Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
    for _ in range(3):
        opt.zero_grad()
        nn.backward(nn.mse_loss(layer(x), np.zeros((1, 2, 4, 4))))
        opt.step()
    opt.set_lr(2.5e-3)
    sched = PlateauSchedulerState(best_metric=0.75, epochs_since_improvement=2)
    _, entries = ckpt.loads(ckpt.dumps("Conv", ckpt.training_state(layer, opt, sched)))
    assert entries["sched/best_metric"] == np.float32(0.75)

    other = nn.Conv(2, 2, ndim=2, rng=np.random.default_rng(99))
    opt2 = nn.Adam(other.parameters(), nn.AdamConfig(lr=1e-2))
    ckpt.restore(other, {**entries, "meta/ignored": np.zeros(1, np.float32)}, opt2)
    assert opt2.step_count == 3 and opt2.lr == np.float32(2.5e-3)
    for (n1, p1), (n2, p2) in zip(layer.named_parameters(), other.named_parameters()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data) and np.array_equal(p1.m, p2.m) and np.array_equal(p1.v, p2.v)


def test_restore_rejects_missing_and_misshaped(rng):
    layer = nn.Conv(2, 2, ndim=2, rng=rng)
    state = layer.state_dict()
    with pytest.raises(KeyError):
        ckpt.restore(layer, {"weight": state["weight"]})
    with pytest.raises(ValueError, match="shape"):
        ckpt.restore(layer, {"weight": state["weight"][:1], "bias": state["bias"]})


def test_parameter_names_are_unique_paths():
    from voxinpaint.diffusion import InpaintNetConfig, VoxelInpaintUNet
    model = VoxelInpaintUNet(InpaintNetConfig(widths=(4, 8), emb_dim=8))
    names = [p.name for p in model.parameters()]
    assert len(names) == len(set(names))
    assert all(p.m.shape == p.shape and p.v.shape == p.shape for p in model.parameters())
