"""Run configuration: ``[section]`` headers with ``key = value`` lines.

Every key has a default; unknown sections or keys are rejected so typos fail
loudly.  ``dump_config`` writes a file that ``load_config`` reads back to an
equal configuration.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .damage import HOLE_SHAPES, DamageConfig
from .diffusion import DiffusionSchedule, InpaintNetConfig, LossWeights
from .nn import AdamConfig
from .stage1 import MaskNetConfig
from .stage2 import Stage2Config
from .voxel import RES

MASK_SOURCES = ("gt", "predicted")
INFER_MODES = ("single_step", "ddpm_loop")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InferenceConfig:
    mode: str = "single_step"
    single_step_t: int = 0
    ddpm_steps: int = 0  # 0 = all T steps
    mask_source: str = "predicted"

    def __post_init__(self):
        if self.mode not in INFER_MODES:
            raise ConfigError(f"inference mode must be one of {INFER_MODES}, got '{self.mode}'")
        if self.mask_source not in MASK_SOURCES:
            raise ConfigError(f"mask_source must be one of {MASK_SOURCES}, got '{self.mask_source}'")


@dataclass(frozen=True)
class RunConfig:
    resolution: int = RES
    seed: int = 0
    output_dir: str = "runs"
    damage: DamageConfig = DamageConfig()
    stage1: MaskNetConfig = MaskNetConfig()
    stage2: Stage2Config = Stage2Config()
    stage2_mask_source: str = "gt"
    weights: LossWeights = LossWeights()
    perceptual_weights: str = ""
    inference: InferenceConfig = InferenceConfig()
    eval_samples_per_object: int = 1


# ------------------------------------------------------------------ schema

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _words(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.replace(",", " ").split())


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# section -> key -> (parser, getter(cfg))
SCHEMA = {
    "general": {
        "resolution": (int, lambda c: c.resolution),
        "seed": (int, lambda c: c.seed),
        "output_dir": (str, lambda c: c.output_dir),
    },
    "damage": {
        "holes_per_slice_min": (int, lambda c: c.damage.holes_per_slice_min),
        "holes_per_slice_max": (int, lambda c: c.damage.holes_per_slice_max),
        "hole_radius_min": (float, lambda c: c.damage.hole_radius_min),
        "hole_radius_max": (float, lambda c: c.damage.hole_radius_max),
        "hole_shapes": (_words, lambda c: c.damage.hole_shapes),
        "erosion_radius": (int, lambda c: c.damage.erosion_radius),
    },
    "stage1": {
        "levels": (int, lambda c: c.stage1.levels),
        "base_channels": (int, lambda c: c.stage1.base_channels),
        "epochs": (int, lambda c: c.stage1.epochs),
        "lr": (float, lambda c: c.stage1.lr),
        "beta1": (float, lambda c: c.stage1.beta1),
        "beta2": (float, lambda c: c.stage1.beta2),
        "batch": (int, lambda c: c.stage1.batch),
        "threshold": (float, lambda c: c.stage1.threshold),
        "indicator_dropout": (float, lambda c: c.stage1.indicator_dropout),
    },
    "stage2": {
        "widths": (_ints, lambda c: c.stage2.net.widths),
        "emb_dim": (int, lambda c: c.stage2.net.emb_dim),
        "epochs": (int, lambda c: c.stage2.epochs),
        "lr": (float, lambda c: c.stage2.lr),
        "batch": (int, lambda c: c.stage2.batch),
        "mirror_p": (float, lambda c: c.stage2.mirror_p),
        "scheduler_factor": (float, lambda c: c.stage2.scheduler_factor),
        "scheduler_patience": (int, lambda c: c.stage2.scheduler_patience),
        "timesteps": (int, lambda c: c.stage2.schedule.T),
        "beta_start": (float, lambda c: c.stage2.schedule.beta_start),
        "beta_end": (float, lambda c: c.stage2.schedule.beta_end),
        "palette_mean": (_floats, lambda c: c.stage2.palette_mean),
        "mask_source": (str, lambda c: c.stage2_mask_source),
        "perceptual_weights": (str, lambda c: c.perceptual_weights),
    },
    "loss": {
        "w_noise": (float, lambda c: c.weights.w_noise),
        "w_bce": (float, lambda c: c.weights.w_bce),
        "w_color": (float, lambda c: c.weights.w_color),
        "w_perceptual": (float, lambda c: c.weights.w_perceptual),
        "w_prior": (float, lambda c: c.weights.w_prior),
    },
    "inference": {
        "mode": (str, lambda c: c.inference.mode),
        "single_step_t": (int, lambda c: c.inference.single_step_t),
        "ddpm_steps": (int, lambda c: c.inference.ddpm_steps),
        "mask_source": (str, lambda c: c.inference.mask_source),
    },
    "eval": {
        "samples_per_object": (int, lambda c: c.eval_samples_per_object),
    },
}


def _build(values: dict[str, dict]) -> RunConfig:
    d = RunConfig()
    g = {**{k: get(d) for k, (_, get) in SCHEMA["general"].items()}, **values.get("general", {})}
    if g["resolution"] != RES:
        raise ConfigError(f"resolution {g['resolution']} unsupported; this build is fixed at {RES}")
    dm = values.get("damage", {})
    s1 = dict(values.get("stage1", {}))
    s2 = dict(values.get("stage2", {}))
    inf = values.get("inference", {})
    try:
        damage = replace(d.damage, **dm)
        stage1 = replace(d.stage1, **s1)
        AdamConfig(lr=stage1.lr, beta1=stage1.beta1, beta2=stage1.beta2)
        AdamConfig(lr=s2.get("lr", d.stage2.lr))
        net = InpaintNetConfig(widths=s2.pop("widths", d.stage2.net.widths), emb_dim=s2.pop("emb_dim", d.stage2.net.emb_dim))
        schedule = DiffusionSchedule(T=s2.pop("timesteps", d.stage2.schedule.T),
                                     beta_start=s2.pop("beta_start", d.stage2.schedule.beta_start),
                                     beta_end=s2.pop("beta_end", d.stage2.schedule.beta_end))
        mask_source = s2.pop("mask_source", d.stage2_mask_source)
        perceptual = s2.pop("perceptual_weights", d.perceptual_weights)
        palette = s2.pop("palette_mean", d.stage2.palette_mean)
        if len(palette) != 3:
            raise ConfigError("palette_mean needs three values")
        stage2 = replace(d.stage2, net=net, schedule=schedule, palette_mean=tuple(palette), **s2)
        weights = replace(d.weights, **values.get("loss", {}))
        inference = replace(d.inference, **inf)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if mask_source not in MASK_SOURCES:
        raise ConfigError(f"stage2 mask_source must be one of {MASK_SOURCES}, got '{mask_source}'")
    if not set(damage.hole_shapes) <= set(HOLE_SHAPES):
        raise ConfigError(f"hole_shapes must be drawn from {HOLE_SHAPES}")
    positive = {"stage1.epochs": stage1.epochs, "stage1.batch": stage1.batch, "stage2.epochs": stage2.epochs,
                "stage2.batch": stage2.batch, "stage1.levels": stage1.levels,
                "stage1.base_channels": stage1.base_channels, "eval.samples_per_object":
                values.get("eval", {}).get("samples_per_object", 1)}
    for key, val in positive.items():
        if val < 1:
            raise ConfigError(f"{key} must be >= 1, got {val}")
    if not 0.0 <= stage2.mirror_p <= 1.0:
        raise ConfigError("stage2.mirror_p must lie in [0, 1]")
    if len(net.widths) < 2 or any(w < 1 for w in net.widths) or net.emb_dim % 2:
        raise ConfigError("stage2.widths needs >= 2 positive entries and emb_dim must be even")
    if not 0 <= inference.single_step_t < schedule.T:
        raise ConfigError(f"inference.single_step_t must lie in [0, {schedule.T})")
    try:
        schedule.check()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(resolution=g["resolution"], seed=g["seed"], output_dir=g["output_dir"], damage=damage,
                     stage1=stage1, stage2=stage2, stage2_mask_source=mask_source,
                     weights=weights, perceptual_weights=perceptual, inference=inference,
                     eval_samples_per_object=values.get("eval", {}).get("samples_per_object", 1))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key '{key}' in [{section}]")
            conv = SCHEMA[section][key][0]
            try:
                values.setdefault(section, {})[key] = conv(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {raw!r}") from exc
    return _build(values)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, get) in keys.items():
            lines.append(f"{key} = {_fmt(get(cfg))}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    names = {f.name for f in fields(RunConfig)}
    unknown = set(kw) - names
    if unknown:
        raise ConfigError(f"unknown RunConfig fields {sorted(unknown)}")
    return replace(cfg, **kw)
