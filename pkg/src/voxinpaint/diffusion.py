"""Mask-conditioned diffusion inpainting on 32^3 voxel grids.

The network sees five channels ``[occupancy | mask | masked RGB]``.  Inside the
mask the occupancy channel carries the ground truth noised to timestep ``t``
(outside it stays clean), and three 1x1x1 heads predict the injected noise,
occupancy logits and a color residual that is added to the known color only
inside the mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import nn
from .damage import Sample
from .inpaint_result import InpaintResult
from .nn import Tensor
from .nn.checkpoint import load as load_checkpoint

PALETTE_MEAN = (0.92, 0.90, 0.85)
# output heads start near zero so untrained predictions sit at logit 0 / zero residual
HEAD_INIT_SCALE = 0.1


# ------------------------------------------------------------------ schedule

@dataclass(frozen=True)
class DiffusionSchedule:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    @property
    def betas(self) -> np.ndarray:
        t = np.arange(self.T, dtype=np.float64)
        return self.beta_start + t / (self.T - 1) * (self.beta_end - self.beta_start)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def check(self) -> None:
        ab = self.alpha_bars
        if not (np.all(np.diff(self.betas) > 0) and np.all(np.diff(ab) < 0)):
            raise ValueError("schedule must have increasing betas and decreasing alpha_bars")
        if not (ab[0] > 0.999 and ab[-1] < 0.01):
            raise ValueError(f"schedule endpoints out of range: alpha_bar[0]={ab[0]}, alpha_bar[T-1]={ab[-1]}")


# ------------------------------------------------------------------ inputs

def build_input(v_dam: np.ndarray, c_dam: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Clean (5, R, R, R) conditioning volume [V_mask | mask | C_mask]."""
    keep = (mask == 0).astype(np.float32)
    x = np.empty((5,) + mask.shape, dtype=np.float32)
    x[0] = v_dam * keep
    x[1] = mask
    x[2:] = c_dam * keep[None]
    return x


def noise_occupancy(v_mask: np.ndarray, v_gt: np.ndarray, mask: np.ndarray, t: int,
                    schedule: DiffusionSchedule, eps: np.ndarray) -> np.ndarray:
    """Occupancy channel: clean outside the mask, noised ground truth inside."""
    ab = schedule.alpha_bars[t]
    noised = np.sqrt(ab) * v_gt + np.sqrt(1.0 - ab) * eps
    m = mask.astype(np.float64)
    return ((1.0 - m) * v_mask + m * noised).astype(np.float32)


def mirror_sample(sample: Sample, axis: int = 0) -> Sample:
    """Flip every volume of a sample along one grid axis (0 = axial/z)."""
    f = lambda a, ch=False: np.ascontiguousarray(np.flip(a, axis=axis + (1 if ch else 0)))  # noqa: E731
    return Sample(v_gt=f(sample.v_gt), c_gt=f(sample.c_gt, True), v_dam=f(sample.v_dam),
                  c_dam=f(sample.c_dam, True), mask=f(sample.mask), seed=sample.seed,
                  source_id=sample.source_id, degenerate=sample.degenerate,
                  meta=dict(sample.meta, mirrored=True))


# ------------------------------------------------------------------ network

@dataclass(frozen=True)
class InpaintNetConfig:
    widths: tuple[int, ...] = (32, 64, 96, 128)
    emb_dim: int = 128
    in_channels: int = 5


class ResBlock(nn.Module):
    """conv-ReLU-conv plus a (1x1x1 projected) skip, then ReLU."""

    def __init__(self, cin: int, cout: int, *, rng, dtype):
        self.conv1 = nn.Conv(cin, cout, ndim=3, rng=rng, dtype=dtype)
        self.conv2 = nn.Conv(cout, cout, ndim=3, rng=rng, dtype=dtype)
        self.skip = nn.Conv(cin, cout, ndim=3, kernel=1, rng=rng, dtype=dtype) if cin != cout else None

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv2(nn.relu(self.conv1(x)))
        s = self.skip(x) if self.skip is not None else x
        return nn.relu(h + s)


class VoxelInpaintUNet(nn.Module):
    name = "VoxelInpaintUNet"

    def __init__(self, cfg: InpaintNetConfig = InpaintNetConfig(), *, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        w = cfg.widths
        self.enc = [ResBlock(cfg.in_channels if i == 0 else w[i - 1], w[i], rng=rng, dtype=dtype)
                    for i in range(len(w))]
        self.time = nn.TimeEmbedding(cfg.emb_dim, w[-1], rng=rng, dtype=dtype)
        self.up = [nn.ConvTranspose(w[i + 1], w[i], ndim=3, rng=rng, dtype=dtype) for i in range(len(w) - 1)]
        self.dec = [ResBlock(2 * w[i], w[i], rng=rng, dtype=dtype) for i in range(len(w) - 1)]
        self.noise_head = nn.Conv(w[0], 1, ndim=3, kernel=1, rng=rng, dtype=dtype, init_scale=HEAD_INIT_SCALE)
        self.occ_head = nn.Conv(w[0], 1, ndim=3, kernel=1, rng=rng, dtype=dtype, init_scale=HEAD_INIT_SCALE)
        self.color_head = nn.Conv(w[0], 3, ndim=3, kernel=1, rng=rng, dtype=dtype, init_scale=HEAD_INIT_SCALE)

    def forward(self, x: Tensor, t) -> tuple[Tensor, Tensor, Tensor]:
        if x.ndim != 5 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (N, {self.cfg.in_channels}, D, H, W) input, got {x.shape}")
        levels = len(self.cfg.widths)
        if any(s % 2 ** (levels - 1) for s in x.shape[2:]):
            raise ValueError(f"spatial dims {x.shape[2:]} not divisible by {2 ** (levels - 1)}")
        skips = []
        h = x
        for i, block in enumerate(self.enc):
            h = block(h)
            if i < levels - 1:
                skips.append(h)
                h = nn.max_pool(h)
        emb = self.time(np.broadcast_to(np.asarray(t), (x.shape[0],)))
        h = h + nn.reshape(emb, emb.shape + (1, 1, 1))
        for i in reversed(range(levels - 1)):
            h = self.up[i](h)
            h = self.dec[i](nn.concat([h, skips[i]], axis=1))
        return self.noise_head(h), self.occ_head(h), self.color_head(h)


# ------------------------------------------------------------------ losses

@dataclass(frozen=True)
class LossWeights:
    w_noise: float = 1.0
    w_bce: float = 1.0
    w_color: float = 20.0
    w_perceptual: float = 0.1
    w_prior: float = 0.1

    def __post_init__(self):
        if min(self.w_noise, self.w_bce, self.w_color, self.w_perceptual, self.w_prior) < 0:
            raise ValueError("loss weights must be non-negative")


class SliceFeatureExtractor:
    """Frozen 2-D conv pyramid applied to axial RGB slices.

    Default weights are random (seeded); ``from_checkpoint`` loads a VCKPT1
    file with entries ``layer{i}.weight`` / ``layer{i}.bias``.
    """

    def __init__(self, channels=(3, 8, 16, 32), *, seed: int = 1234, linear: bool = False,
                 weights: list[tuple[np.ndarray, np.ndarray]] | None = None):
        self.linear = linear
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = []
            for cin, cout in zip(channels[:-1], channels[1:]):
                w = nn.layers.kaiming_uniform(rng, (cout, cin, 3, 3), cin * 9, np.float32)
                weights.append((w, np.zeros(cout, dtype=np.float32)))
        self.layers = [(Tensor(w), Tensor(b)) for w, b in weights]
        self.in_channels = self.layers[0][0].shape[1]

    @classmethod
    def from_checkpoint(cls, path, linear: bool = False) -> "SliceFeatureExtractor":
        _, entries = load_checkpoint(path)
        n = len([k for k in entries if k.endswith(".weight")])
        weights = [(entries[f"layer{i}.weight"], entries[f"layer{i}.bias"]) for i in range(n)]
        return cls(weights=weights, linear=linear)

    def features(self, x: Tensor) -> list[Tensor]:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"extractor expects {self.in_channels} channels, got input {x.shape}")
        feats = []
        h = x
        for i, (w, b) in enumerate(self.layers):
            wt = Tensor(w.data.astype(x.dtype))
            bt = Tensor(b.data.astype(x.dtype))
            h = nn.conv(h, wt, bt)
            if not self.linear:
                h = nn.relu(h)
            feats.append(h)
            if i < len(self.layers) - 1 and all(s % 2 == 0 for s in h.shape[2:]):
                h = nn.avg_pool(h)
        return feats


def _axial_slices(c) -> Tensor:
    """(N, 3, Z, Y, X) -> (N * Z, 3, Y, X)."""
    c = c if isinstance(c, Tensor) else Tensor(np.asarray(c))
    n, ch, z, y, x = c.shape
    return nn.reshape(nn.transpose(c, (0, 2, 1, 3, 4)), (n * z, ch, y, x))


def perceptual_slice_loss(pred_color, gt_color, extractor: SliceFeatureExtractor) -> Tensor:
    """Mean squared feature difference per layer, summed over layers; averages over slices."""
    pred = _axial_slices(pred_color)
    gt = Tensor(_axial_slices(gt_color).data.astype(pred.dtype))
    total = None
    for fp, fg in zip(extractor.features(pred), extractor.features(gt)):
        term = nn.mse_loss(fp, fg.data)
        total = term if total is None else total + term
    return total


def color_prior_loss(pred_color, region: np.ndarray, palette_mean=PALETTE_MEAN) -> Tensor:
    """Squared distance between the mean predicted RGB over ``region`` and a palette mean.

    ``region`` is (N, 1, Z, Y, X) (masked and occupied voxels).
    """
    pred = pred_color if isinstance(pred_color, Tensor) else Tensor(np.asarray(pred_color))
    count = float(np.asarray(region).sum())
    if count == 0:
        return Tensor(np.zeros((), dtype=pred.dtype))
    weighted = nn.mul(pred, np.asarray(region, dtype=pred.dtype))
    means = nn.mul(nn.tsum(weighted, axis=(0, 2, 3, 4)), 1.0 / count)
    diff = nn.sub(means, np.asarray(palette_mean, dtype=pred.dtype))
    return nn.tsum(nn.mul(diff, diff))


@dataclass
class LossBreakdown:
    total: Tensor
    terms: dict[str, float] = field(default_factory=dict)


def compose_color(c_mask, mask, residual: Tensor) -> Tensor:
    """Known color plus the residual inside the mask (unclamped, differentiable)."""
    return nn.add(Tensor(np.asarray(c_mask, dtype=residual.dtype)), nn.mul(residual, np.asarray(mask, dtype=residual.dtype)))


def composite_loss(outputs, batch: dict, weights: LossWeights, extractor: SliceFeatureExtractor | None,
                   palette_mean=PALETTE_MEAN) -> LossBreakdown:
    """Weighted sum of noise MSE, occupancy BCE, masked color L1, perceptual and prior terms.

    ``batch`` carries (N, C, Z, Y, X) arrays: ``eps``, ``v_gt``, ``c_gt``,
    ``mask`` (the conditioning mask) and ``c_mask``.
    """
    noise_pred, logits, residual = outputs
    mask = batch["mask"]
    region = mask * batch["v_gt"]
    composed = compose_color(batch["c_mask"], mask, residual)
    dtype = residual.dtype
    zero = lambda: Tensor(np.zeros((), dtype=dtype))  # noqa: E731
    terms = {
        "noise": nn.masked_mse_loss(noise_pred, batch["eps"], mask),
        "bce": nn.bce_loss(nn.sigmoid(logits), batch["v_gt"]),
        "color": nn.l1_loss_masked(composed, batch["c_gt"], region),
        "perceptual": perceptual_slice_loss(composed, batch["c_gt"], extractor)
        if extractor is not None and weights.w_perceptual > 0 else zero(),
        "prior": color_prior_loss(composed, region, palette_mean) if weights.w_prior > 0 else zero(),
    }
    w = {"noise": weights.w_noise, "bce": weights.w_bce, "color": weights.w_color,
         "perceptual": weights.w_perceptual, "prior": weights.w_prior}
    total = None
    for key, term in terms.items():
        part = nn.mul(term, w[key])
        total = part if total is None else total + part
    return LossBreakdown(total=total, terms={k: float(v.data) for k, v in terms.items()})


# ------------------------------------------------------------------ output composition

def compose_output(outputs, x: np.ndarray) -> InpaintResult:
    """Threshold occupancy inside the mask and add the color residual there.

    ``x`` is the clean (5, R, R, R) conditioning input.  Outside the mask the
    known occupancy and color are returned bit-exactly; colors are clamped to
    [0, 1] and zeroed on empty voxels.
    """
    _, logits, residual = (np.asarray(o.data if isinstance(o, Tensor) else o) for o in outputs)
    logits = logits.reshape(x.shape[1:])
    residual = residual.reshape((3,) + x.shape[1:])
    mask = x[1] != 0
    v_mask = x[0].astype(np.uint8)
    c_mask = x[2:]
    prob = expit(logits.astype(np.float64))
    pred_occ = (prob >= 0.5).astype(np.uint8)
    v_hat = np.where(mask, pred_occ, v_mask).astype(np.uint8)
    c_hat = np.where(mask[None], np.clip(c_mask + residual, 0.0, 1.0), c_mask).astype(np.float32)
    c_hat = c_hat * v_hat[None]
    return InpaintResult(v_hat=v_hat, c_hat=c_hat.astype(np.float32), occupancy_logits=logits,
                         color_residual=residual)


# ------------------------------------------------------------------ inference

def _forward_numpy(model: VoxelInpaintUNet, x: np.ndarray, t: int):
    return model(Tensor(x[None].astype(np.float32)), np.asarray([t]))


def infer_inpaint(model: VoxelInpaintUNet, v_dam: np.ndarray, c_dam: np.ndarray, mask: np.ndarray,
                  mode: str = "single_step", seed: int = 0, schedule: DiffusionSchedule = DiffusionSchedule(),
                  num_steps: int | None = None, single_step_t: int = 0) -> InpaintResult:
    """Inpaint one object.

    ``single_step``: one forward pass on the clean input (masked occupancy
    zeroed) at timestep ``single_step_t``.  ``ddpm_loop``: ancestral sampling of
    the masked occupancy channel from pure noise, re-imposing the known region
    after every step, over ``num_steps`` evenly spaced timesteps (all ``T`` by
    default); color comes from a final pass on the sampled occupancy.
    """
    x = build_input(v_dam, c_dam, mask)
    m = x[1].astype(np.float64)
    if mode == "single_step":
        outputs = _forward_numpy(model, x, single_step_t)
        res = compose_output(outputs, x)
        res.meta.update(mode=mode, t=single_step_t)
        return res
    if mode != "ddpm_loop":
        raise ValueError(f"unknown inference mode '{mode}'")
    rng = np.random.default_rng(seed)
    steps = schedule.T if num_steps is None else int(num_steps)
    if not 1 <= steps <= schedule.T:
        raise ValueError(f"num_steps must lie in [1, {schedule.T}]")
    ts = np.unique(np.linspace(0, schedule.T - 1, steps).round().astype(int))[::-1]
    ab_all = schedule.alpha_bars
    known = x[0].astype(np.float64)
    state = (1 - m) * known + m * rng.standard_normal(known.shape)
    for i, t in enumerate(ts):
        xin = x.copy()
        xin[0] = state.astype(np.float32)
        noise_pred = np.asarray(_forward_numpy(model, xin, int(t))[0].data, dtype=np.float64).reshape(known.shape)
        ab_t = ab_all[t]
        ab_prev = ab_all[ts[i + 1]] if i + 1 < len(ts) else 1.0
        alpha = ab_t / ab_prev
        beta = 1.0 - alpha
        mean = (state - beta / np.sqrt(1.0 - ab_t) * noise_pred) / np.sqrt(alpha)
        if i + 1 < len(ts):
            var = beta * (1.0 - ab_prev) / (1.0 - ab_t)
            mean = mean + np.sqrt(var) * rng.standard_normal(known.shape)
        state = (1 - m) * known + m * mean
    xin = x.copy()
    xin[0] = state.astype(np.float32)
    outputs = _forward_numpy(model, xin, 0)
    res = compose_output(outputs, x)
    res.meta.update(mode=mode, steps=len(ts), seed=seed)
    return res
