"""Training loop for the diffusion inpainting network.

Every epoch draws a fresh damage realization per training object (seeded by
epoch and object id), mirrors each sample along z with probability 0.5, and
samples one timestep and one noise volume per sample.  The validation set uses
one fixed realization, timestep and noise volume per object so validation
losses are comparable across epochs and reproducible after reloading.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .corpus import Artifact
from .damage import DamageConfig, Sample, synth_damage
from .diffusion import (DiffusionSchedule, InpaintNetConfig, LossWeights, SliceFeatureExtractor,
                        VoxelInpaintUNet, build_input, composite_loss, mirror_sample, noise_occupancy,
                        PALETTE_MEAN)
from .nn import Tensor
from .nn import checkpoint as ckpt
from .seeding import derive_seed

log = logging.getLogger(__name__)

TERMS = ("noise", "bce", "color", "perceptual", "prior")
MaskFn = Callable[[Sample], np.ndarray]


@dataclass(frozen=True)
class Stage2Config:
    net: InpaintNetConfig = InpaintNetConfig()
    epochs: int = 100
    lr: float = 1e-3
    batch: int = 4
    mirror_p: float = 0.5
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    schedule: DiffusionSchedule = DiffusionSchedule()
    palette_mean: tuple[float, float, float] = PALETTE_MEAN


@dataclass
class Stage2EpochLog:
    epoch: int
    train_total: float
    val_total: float
    lr: float
    train_terms: dict[str, float] = field(default_factory=dict)
    val_terms: dict[str, float] = field(default_factory=dict)
    damage_seeds: list[int] = field(default_factory=list)


@dataclass
class Stage2Result:
    model: VoxelInpaintUNet
    log: list[Stage2EpochLog]
    best_epoch: int
    best_val: float
    best_state: dict[str, np.ndarray]


def damage_seed(root_seed: int, epoch: int, source_id: str) -> int:
    return derive_seed(root_seed, "stage2-damage", epoch, source_id)


def realize(artifact: Artifact, damage: DamageConfig, seed: int) -> Sample:
    return synth_damage(artifact.v_gt, artifact.c_gt, replace(damage, seed=seed), source_id=artifact.source_id)


def assemble_batch(samples: list[Sample], masks: list[np.ndarray], ts: np.ndarray, eps: np.ndarray,
                   schedule: DiffusionSchedule) -> tuple[np.ndarray, dict]:
    """Network input (N, 5, R, R, R) plus the loss targets for a list of samples."""
    xs, v_gt, c_gt, m, c_mask = [], [], [], [], []
    for s, mask, t, e in zip(samples, masks, ts, eps):
        x = build_input(s.v_dam, s.c_dam, mask)
        x[0] = noise_occupancy(x[0], s.v_gt, mask, int(t), schedule, e)
        xs.append(x)
        v_gt.append(s.v_gt[None].astype(np.float32))
        c_gt.append(s.c_gt.astype(np.float32))
        m.append(mask[None].astype(np.float32))
        c_mask.append(x[2:])
    batch = {"eps": eps[:, None].astype(np.float32), "v_gt": np.stack(v_gt), "c_gt": np.stack(c_gt),
             "mask": np.stack(m), "c_mask": np.stack(c_mask)}
    return np.stack(xs), batch


def loss_on(model: VoxelInpaintUNet, samples, masks, ts, eps, cfg: Stage2Config, weights: LossWeights,
            extractor: SliceFeatureExtractor | None):
    x, batch = assemble_batch(samples, masks, ts, eps, cfg.schedule)
    outputs = model(Tensor(x), np.asarray(ts))
    return composite_loss(outputs, batch, weights, extractor, cfg.palette_mean)


@dataclass
class ValidationSet:
    samples: list[Sample]
    masks: list[np.ndarray]
    ts: np.ndarray
    eps: np.ndarray


def build_validation(val_artifacts: list[Artifact], damage: DamageConfig, seed: int, schedule: DiffusionSchedule,
                     mask_fn: MaskFn | None = None) -> ValidationSet:
    samples = [realize(a, damage, derive_seed(seed, "stage2-val-damage", 0, a.source_id)) for a in val_artifacts]
    samples = [s for s in samples if not s.degenerate]
    if not samples:
        raise ValueError("every validation realization is degenerate")
    masks = [s.mask if mask_fn is None else mask_fn(s) for s in samples]
    ts, eps = [], []
    for s in samples:
        rng = np.random.default_rng(derive_seed(seed, "stage2-val-noise", 0, s.source_id))
        ts.append(int(rng.integers(0, schedule.T)))
        eps.append(rng.standard_normal(s.v_gt.shape).astype(np.float32))
    return ValidationSet(samples, masks, np.asarray(ts), np.stack(eps) if eps else np.zeros((0,)))


def validation_loss(model: VoxelInpaintUNet, val: ValidationSet, cfg: Stage2Config, weights: LossWeights,
                    extractor: SliceFeatureExtractor | None) -> tuple[float, dict[str, float]]:
    """Sample-weighted mean of the total loss and of each term over the fixed validation set."""
    total, terms, n = 0.0, dict.fromkeys(TERMS, 0.0), 0
    for lo in range(0, len(val.samples), cfg.batch):
        hi = lo + cfg.batch
        res = loss_on(model, val.samples[lo:hi], val.masks[lo:hi], val.ts[lo:hi], val.eps[lo:hi],
                      cfg, weights, extractor)
        k = len(val.samples[lo:hi])
        total += float(res.total.data) * k
        for key in TERMS:
            terms[key] += res.terms[key] * k
        n += k
    n = max(n, 1)
    return total / n, {k: v / n for k, v in terms.items()}


def model_meta(cfg: InpaintNetConfig) -> dict[str, np.ndarray]:
    return {"meta/widths": np.asarray(cfg.widths, dtype=np.float32),
            "meta/emb_dim": np.asarray(cfg.emb_dim, dtype=np.float32),
            "meta/in_channels": np.asarray(cfg.in_channels, dtype=np.float32)}


def config_from_meta(entries: dict[str, np.ndarray]) -> InpaintNetConfig:
    if "meta/widths" not in entries:
        return InpaintNetConfig()
    return InpaintNetConfig(widths=tuple(int(w) for w in entries["meta/widths"]),
                            emb_dim=int(entries["meta/emb_dim"]), in_channels=int(entries["meta/in_channels"]))


def train_stage2(train: list[Artifact], val: list[Artifact], cfg: Stage2Config = Stage2Config(),
                 weights: LossWeights = LossWeights(), seed: int = 0, damage: DamageConfig = DamageConfig(),
                 extractor: SliceFeatureExtractor | None = None, mask_fn: MaskFn | None = None,
                 epochs: int | None = None, out_dir=None) -> Stage2Result:
    """Train the inpainting network; keeps the lowest-validation-loss weights.

    ``mask_fn`` maps a damaged sample to the conditioning mask; ``None`` uses
    the ground-truth damage mask.
    """
    cfg.schedule.check()
    if not train or not val:
        raise ValueError("stage-2 training needs nonempty train and val sets")
    epochs = cfg.epochs if epochs is None else epochs
    extractor = SliceFeatureExtractor() if extractor is None else extractor
    model = VoxelInpaintUNet(cfg.net, seed=derive_seed(seed, "stage2-init"))
    opt = nn.Adam(model.parameters(), nn.AdamConfig(lr=cfg.lr))
    sched = nn.PlateauSchedulerState(cfg.scheduler_factor, cfg.scheduler_patience)
    val_set = build_validation(val, damage, seed, cfg.schedule, mask_fn)
    history: list[Stage2EpochLog] = []
    best_val, best_epoch, best_state = float("inf"), -1, None
    for epoch in range(1, epochs + 1):
        seeds = [damage_seed(seed, epoch, a.source_id) for a in train]
        order = np.random.default_rng(derive_seed(seed, "stage2-order", epoch)).permutation(len(train))
        running, running_terms, seen = 0.0, dict.fromkeys(TERMS, 0.0), 0
        for lo in range(0, len(order), cfg.batch):
            samples, masks, ts, eps = [], [], [], []
            for i in order[lo:lo + cfg.batch]:
                a = train[i]
                s = realize(a, damage, seeds[i])
                if s.degenerate:
                    log.warning("stage2 epoch %d: skipping degenerate sample %s", epoch, a.source_id)
                    continue
                mask = s.mask if mask_fn is None else mask_fn(s)
                rng = np.random.default_rng(derive_seed(seed, "stage2-noise", epoch, a.source_id))
                if rng.random() < cfg.mirror_p:
                    s = mirror_sample(s)
                    mask = np.ascontiguousarray(mask[::-1])
                samples.append(s)
                masks.append(mask)
                ts.append(int(rng.integers(0, cfg.schedule.T)))
                eps.append(rng.standard_normal(s.v_gt.shape).astype(np.float32))
            if not samples:
                continue
            opt.zero_grad()
            res = loss_on(model, samples, masks, np.asarray(ts), np.stack(eps), cfg, weights, extractor)
            nn.backward(res.total)
            opt.step()
            k = len(samples)
            running += float(res.total.data) * k
            for key in TERMS:
                running_terms[key] += res.terms[key] * k
            seen += k
        val_total, val_terms = validation_loss(model, val_set, cfg, weights, extractor)
        entry = Stage2EpochLog(epoch, running / max(seen, 1), val_total, opt.lr,
                               {k: v / max(seen, 1) for k, v in running_terms.items()}, val_terms, seeds)
        history.append(entry)
        log.info("stage2 epoch %d train=%.6f val=%.6f lr=%.3g", epoch, entry.train_total, val_total, opt.lr)
        if val_total < best_val:
            best_val, best_epoch = val_total, epoch
            best_state = {**ckpt.training_state(model, opt, sched), **model_meta(cfg.net)}
            best_state = {k: np.array(v, copy=True) for k, v in best_state.items()}
        sched, mult = nn.plateau_step(sched, val_total)
        if mult != 1.0:
            opt.set_lr(opt.lr * mult)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt.save(out / "best.vckpt", VoxelInpaintUNet.name, best_state)
        write_log(out / "log.csv", history)
    ckpt.restore(model, best_state)
    return Stage2Result(model, history, best_epoch, best_val, best_state)


def write_log(path, history: list[Stage2EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_total", *(f"train_{k}" for k in TERMS), "val_total",
                    *(f"val_{k}" for k in TERMS), "lr"])
        for e in history:
            w.writerow([e.epoch, f"{e.train_total:.9g}", *(f"{e.train_terms[k]:.9g}" for k in TERMS),
                        f"{e.val_total:.9g}", *(f"{e.val_terms[k]:.9g}" for k in TERMS), f"{e.lr:.9g}"])


def load_stage2(path) -> VoxelInpaintUNet:
    name, entries = ckpt.load(path)
    if name != VoxelInpaintUNet.name:
        raise ValueError(f"{path} holds a '{name}' checkpoint, expected {VoxelInpaintUNet.name}")
    model = VoxelInpaintUNet(config_from_meta(entries))
    ckpt.restore(model, entries)
    return model
