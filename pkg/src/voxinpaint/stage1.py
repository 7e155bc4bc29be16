"""Slice-wise damage localization.

A 2-D U-Net reads 4-channel axial slices (standardized RGB of the damaged
color volume plus a coarse damage indicator) and predicts per-pixel damage
probabilities.  Binary slice predictions are stacked along z and closed with
a 3x3x3 box to give the volumetric mask.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from . import morphology, nn
from .damage import Sample
from .nn import Tensor
from .nn import checkpoint as ckpt
from .seeding import derive_seed

log = logging.getLogger(__name__)

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
MAX_ROTATION_DEG = 15.0
HEAD_INIT_SCALE = 0.1


@dataclass(frozen=True)
class MaskNetConfig:
    levels: int = 4
    base_channels: int = 64
    epochs: int = 50
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch: int = 8
    threshold: float = 0.5
    indicator_dropout: float = 0.3

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * 2**i for i in range(self.levels))


@dataclass
class SliceBatch:
    inputs: np.ndarray   # (B, 4, H, W)
    targets: np.ndarray  # (B, 1, H, W)
    slice_index: np.ndarray
    sample_id: list[str] = field(default_factory=list)


# ------------------------------------------------------------------ data

def coarse_indicator(mask: np.ndarray, dropout: float, seed: int) -> np.ndarray:
    """Noisy superset of the damage: 1-voxel box dilation with random pixel dropout."""
    grown = morphology.dilate(mask, morphology.box(1))
    if dropout <= 0:
        return grown
    keep = np.random.default_rng(seed).random(mask.shape) >= dropout
    return (grown.astype(bool) & keep).astype(np.uint8)


def standardize_rgb(x: np.ndarray) -> np.ndarray:
    """(..., 4, H, W): ImageNet-standardize channels 0-2, leave channel 3."""
    out = np.array(x, dtype=np.float32, copy=True)
    out[..., :3, :, :] = (out[..., :3, :, :] - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]
    return out


def unstandardize_rgb(x: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=np.float32, copy=True)
    out[..., :3, :, :] = out[..., :3, :, :] * IMAGENET_STD[:, None, None] + IMAGENET_MEAN[:, None, None]
    return out


def extract_slices(sample: Sample, indicator: np.ndarray, standardize: bool = True) -> SliceBatch:
    """One row per axial slice: RGB of c_dam plus indicator; target = mask slice."""
    depth = sample.mask.shape[0]
    inputs = np.empty((depth, 4) + sample.mask.shape[1:], dtype=np.float32)
    inputs[:, :3] = sample.c_dam.transpose(1, 0, 2, 3)
    inputs[:, 3] = indicator
    if standardize:
        inputs = standardize_rgb(inputs)
    targets = sample.mask[:, None].astype(np.float32)
    return SliceBatch(inputs, targets, np.arange(depth), [sample.source_id] * depth)


def augment_slice(inputs: np.ndarray, target: np.ndarray, seed: int,
                  max_angle: float = MAX_ROTATION_DEG) -> tuple[np.ndarray, np.ndarray]:
    """Random h/v flips and in-plane rotation applied identically to input and target.

    ``inputs`` is the raw (4, H, W) slice before standardization.  RGB uses
    bilinear interpolation; the indicator and target use nearest neighbor.
    Pixels rotated in from outside the frame are 0.
    """
    rng = np.random.default_rng(seed)
    flip_h, flip_v = rng.random() < 0.5, rng.random() < 0.5
    angle = float(rng.uniform(-max_angle, max_angle))
    return transform_slice(inputs, target, flip_h, flip_v, angle)


def transform_slice(inputs: np.ndarray, target: np.ndarray, flip_h: bool, flip_v: bool,
                    angle: float) -> tuple[np.ndarray, np.ndarray]:
    x = np.array(inputs, dtype=np.float32, copy=True)
    y = np.array(target, dtype=np.float32, copy=True)
    if flip_h:
        x, y = x[..., ::-1], y[..., ::-1]
    if flip_v:
        x, y = x[..., ::-1, :], y[..., ::-1, :]
    if angle != 0.0:
        rot = lambda a, order: ndimage.rotate(a, angle, axes=(-1, -2), reshape=False, order=order,  # noqa: E731
                                              mode="constant", cval=0.0, prefilter=False)
        rgb = np.clip(rot(x[:3], 1), 0.0, 1.0)
        ind = rot(x[3:], 0)
        y = rot(y, 0)
        x = np.concatenate([rgb, ind], axis=0)
    return np.ascontiguousarray(x, dtype=np.float32), np.ascontiguousarray(y, dtype=np.float32)


# ------------------------------------------------------------------ network

class DoubleConv(nn.Module):
    def __init__(self, cin: int, cout: int, *, rng, dtype):
        self.conv1 = nn.Conv(cin, cout, ndim=2, rng=rng, dtype=dtype)
        self.conv2 = nn.Conv(cout, cout, ndim=2, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return nn.relu(self.conv2(nn.relu(self.conv1(x))))


class MaskUNet2D(nn.Module):
    """Four downsampling stages (64..512 channels by default), symmetric decoder."""

    name = "UNet2DColor"

    def __init__(self, cfg: MaskNetConfig = MaskNetConfig(), *, in_channels: int = 4, seed: int = 0,
                 dtype=np.float32):
        rng = np.random.default_rng(seed)
        ch = cfg.channels
        self.cfg = cfg
        self.enc = [DoubleConv(in_channels if i == 0 else ch[i - 1], ch[i], rng=rng, dtype=dtype)
                    for i in range(len(ch))]
        self.bottleneck = DoubleConv(ch[-1], ch[-1], rng=rng, dtype=dtype)
        self.up = [nn.ConvTranspose(ch[i], ch[i], ndim=2, rng=rng, dtype=dtype) for i in range(len(ch))]
        self.dec = [DoubleConv(2 * ch[i], ch[i - 1] if i > 0 else ch[0], rng=rng, dtype=dtype)
                    for i in range(len(ch))]
        self.head = nn.Conv(ch[0], 1, ndim=2, kernel=1, rng=rng, dtype=dtype, init_scale=HEAD_INIT_SCALE)

    def forward(self, x: Tensor) -> Tensor:
        """(B, 4, H, W) -> (B, 1, H, W) logits."""
        if x.ndim != 4:
            raise ValueError(f"expected (B, C, H, W) input, got {x.shape}")
        skips = []
        h = x
        for block in self.enc:
            h = block(h)
            skips.append(h)
            h = nn.max_pool(h)
        h = self.bottleneck(h)
        for i in reversed(range(len(self.enc))):
            h = self.up[i](h)
            h = self.dec[i](nn.concat([h, skips[i]], axis=1))
        return self.head(h)


def predict_slice(model: MaskUNet2D, inputs: np.ndarray) -> np.ndarray:
    """Probability map(s) for standardized (4, H, W) or (B, 4, H, W) input."""
    batched = inputs.ndim == 4
    x = inputs if batched else inputs[None]
    probs = nn.sigmoid(model(Tensor(np.asarray(x, dtype=np.float32)))).data
    return probs if batched else probs[0]


def aggregate_mask(slice_masks: np.ndarray) -> np.ndarray:
    """Stack binary (Z, H, W) slice masks and close with a 3x3x3 box."""
    stacked = (np.asarray(slice_masks) != 0).astype(np.uint8)
    if stacked.ndim != 3:
        raise ValueError(f"expected (Z, H, W) slice masks, got {stacked.shape}")
    return morphology.close(stacked, morphology.box(1))


def predict_volume_mask(model: MaskUNet2D, sample: Sample, indicator: np.ndarray,
                        threshold: float = 0.5, batch: int = 8) -> np.ndarray:
    rows = extract_slices(sample, indicator).inputs
    probs = np.concatenate([predict_slice(model, rows[i:i + batch]) for i in range(0, len(rows), batch)])
    return aggregate_mask(probs[:, 0] >= threshold)


# ------------------------------------------------------------------ training

@dataclass
class EpochLog:
    epoch: int
    train_bce: float
    val_bce: float
    lr: float


def _indicator_seed(root_seed: int, tag: str, epoch: int, source_id: str) -> int:
    return derive_seed(root_seed, f"stage1-indicator-{tag}", epoch, source_id)


def validation_bce(model: MaskUNet2D, val_rows: SliceBatch, batch: int) -> float:
    total, n = 0.0, 0
    for lo in range(0, len(val_rows.inputs), batch):
        x = Tensor(val_rows.inputs[lo:lo + batch])
        y = val_rows.targets[lo:lo + batch]
        loss = nn.bce_loss(nn.sigmoid(model(x)), y)
        total += float(loss.data) * len(y)
        n += len(y)
    return total / max(n, 1)


def build_slice_rows(samples: list[Sample], root_seed: int, tag: str, epoch: int, dropout: float,
                     standardize: bool = True) -> SliceBatch:
    parts = []
    for s in samples:
        ind = coarse_indicator(s.mask, dropout, _indicator_seed(root_seed, tag, epoch, s.source_id))
        parts.append(extract_slices(s, ind, standardize=standardize))
    return SliceBatch(np.concatenate([p.inputs for p in parts]), np.concatenate([p.targets for p in parts]),
                      np.concatenate([p.slice_index for p in parts]), sum((p.sample_id for p in parts), []))


@dataclass
class Stage1Result:
    model: MaskUNet2D
    log: list[EpochLog]
    best_epoch: int
    best_val: float
    best_state: dict[str, np.ndarray]


def train_stage1(train_samples: list[Sample] | Callable[[int], list[Sample]], val_samples: list[Sample], cfg: MaskNetConfig, seed: int,
                 epochs: int | None = None, out_dir=None, augment: bool = True) -> Stage1Result:
    """Adam + BCE over all axial slices; keeps the lowest-validation-loss weights.

    Training slices are augmented (flips, rotations) and reshuffled each epoch;
    validation slices are fixed and never augmented.  ``train_samples`` may be
    a callable mapping the epoch number to that epoch's samples.
    """
    epochs = cfg.epochs if epochs is None else epochs
    model = MaskUNet2D(cfg, seed=derive_seed(seed, "stage1-init"))
    opt = nn.Adam(model.parameters(), nn.AdamConfig(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2))
    val_rows = build_slice_rows(val_samples, seed, "val", 0, cfg.indicator_dropout)
    history: list[EpochLog] = []
    best_val, best_epoch, best_state = float("inf"), -1, None
    for epoch in range(1, epochs + 1):
        epoch_samples = train_samples(epoch) if callable(train_samples) else train_samples
        raw = build_slice_rows(epoch_samples, seed, "train", epoch, cfg.indicator_dropout, standardize=False)
        order = np.random.default_rng(derive_seed(seed, "stage1-order", epoch)).permutation(len(raw.inputs))
        running, seen = 0.0, 0
        for lo in range(0, len(order), cfg.batch):
            idx = order[lo:lo + cfg.batch]
            xs, ys = [], []
            for i in idx:
                x, y = raw.inputs[i], raw.targets[i]
                if augment:
                    x, y = augment_slice(x, y, derive_seed(seed, "stage1-aug", epoch, int(i)))
                xs.append(x)
                ys.append(y)
            xb = standardize_rgb(np.stack(xs))
            yb = np.stack(ys)
            opt.zero_grad()
            loss = nn.bce_loss(nn.sigmoid(model(Tensor(xb))), yb)
            nn.backward(loss)
            opt.step()
            running += float(loss.data) * len(idx)
            seen += len(idx)
        val = validation_bce(model, val_rows, cfg.batch)
        history.append(EpochLog(epoch, running / max(seen, 1), val, opt.lr))
        log.info("stage1 epoch %d train_bce=%.6f val_bce=%.6f", epoch, history[-1].train_bce, val)
        if val < best_val:
            best_val, best_epoch = val, epoch
            best_state = {k: np.array(v, copy=True) for k, v in ckpt.training_state(model, opt).items()}
            best_state.update(model_meta(cfg))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt.save(out / "best.vckpt", MaskUNet2D.name, best_state)
        write_log(out / "log.csv", history)
    ckpt.restore(model, best_state)
    return Stage1Result(model, history, best_epoch, best_val, best_state)


def write_log(path, history: list[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_bce", "val_bce", "lr"])
        for e in history:
            w.writerow([e.epoch, f"{e.train_bce:.9g}", f"{e.val_bce:.9g}", f"{e.lr:.9g}"])


def model_meta(cfg: MaskNetConfig) -> dict[str, np.ndarray]:
    return {"meta/levels": np.asarray(cfg.levels, dtype=np.float32),
            "meta/base_channels": np.asarray(cfg.base_channels, dtype=np.float32),
            "meta/threshold": np.asarray(cfg.threshold, dtype=np.float32)}


def load_stage1(path, cfg: MaskNetConfig = MaskNetConfig()) -> MaskUNet2D:
    """Rebuild the network from a checkpoint; architecture comes from its meta entries."""
    name, entries = ckpt.load(path)
    if name != MaskUNet2D.name:
        raise ValueError(f"{path} holds a '{name}' checkpoint, expected {MaskUNet2D.name}")
    if "meta/levels" in entries:
        cfg = replace(cfg, levels=int(entries["meta/levels"]), base_channels=int(entries["meta/base_channels"]))
    model = MaskUNet2D(cfg)
    ckpt.restore(model, entries)
    return model
