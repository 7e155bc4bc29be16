"""Command-line entry point: ``voxinpaint <subcommand> ...``.

Every subcommand accepts ``--seed``, ``--config`` and ``--manifest``.  Relative
output paths resolve against ``$VOXINPAINT_OUTPUT_ROOT`` when it is set.
Failures print a diagnostic naming the stage and exit nonzero.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baseline, config, corpus, io, pipeline, stage1, stage2, voxel
from .damage import synth_damage
from .seeding import derive_seed

OUTPUT_ROOT_ENV = "VOXINPAINT_OUTPUT_ROOT"
log = logging.getLogger("voxinpaint")


class CliError(RuntimeError):
    pass


def out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def run_config(args) -> config.RunConfig:
    cfg = config.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def run_manifest(args) -> corpus.Manifest:
    return corpus.read_manifest(args.manifest) if args.manifest else corpus.default_manifest()


def load_artifacts(manifest: corpus.Manifest, split: str) -> list[corpus.Artifact]:
    return [corpus.load_artifact(e, manifest.base_dir) for e in manifest.split(split)]


def fixed_realizations(artifacts, cfg: config.RunConfig):
    return [synth_damage(a.v_gt, a.c_gt, replace(cfg.damage, seed=derive_seed(cfg.seed, "eval-damage", 0, a.source_id)),
                         source_id=a.source_id) for a in artifacts]


# ------------------------------------------------------------------ subcommands

def cmd_voxelize(args) -> None:
    run_config(args)
    if args.input.startswith("procedural:"):
        art = corpus.load_artifact(corpus.ManifestEntry("shape", args.input, "test"))
    else:
        vox = voxel.voxelize(voxel.normalize_mesh(io.read_obj(args.input)))
        if vox.open_mesh:
            log.warning("voxelize: mesh %s is not watertight; flood fill may leak", args.input)
        art = corpus.Artifact(Path(args.input).stem, vox.occupancy, vox.color)
    dest = out_path(args.out)
    pipeline.save_artifact(dest, art)
    print(f"voxelize: wrote {dest} ({int(art.v_gt.sum())} occupied voxels)")


def _artifact_from(path: str) -> corpus.Artifact:
    p = Path(path)
    if p.is_file() and p.suffix == ".vvol":
        v = io.read_vvol(p)
        color = p.with_name("color.vvol")
        c = io.read_vvol(color) if color.is_file() else np.zeros((3,) + v.shape, np.float32)
        return corpus.Artifact(p.parent.name, v, c * v[None])
    if p.is_dir():
        return pipeline.load_artifact_dir(p)
    raise CliError(f"input {path} is neither a VVOL1 file nor an artifact directory")


def cmd_synth_damage(args) -> None:
    cfg = run_config(args)
    art = _artifact_from(args.input)
    s = synth_damage(art.v_gt, art.c_gt, replace(cfg.damage, seed=cfg.seed), source_id=art.source_id)
    dest = out_path(args.out)
    pipeline.save_sample(dest, s)
    flag = " (degenerate)" if s.degenerate else ""
    print(f"synth-damage: wrote {dest}, {int(s.mask.sum())} masked voxels{flag}")


def cmd_train_mask(args) -> None:
    cfg = run_config(args)
    manifest = run_manifest(args)
    manifest.validate(require_splits=("train", "val"))
    train = load_artifacts(manifest, "train")
    val = fixed_realizations(load_artifacts(manifest, "val"), cfg)
    res = stage1.train_stage1(pipeline.stage1_epoch_samples(train, cfg), val, cfg.stage1, seed=cfg.seed,
                              epochs=args.epochs, out_dir=out_path(args.out))
    print(f"train-mask: best epoch {res.best_epoch}, val_bce {res.best_val:.6g}")


def cmd_predict_mask(args) -> None:
    cfg = run_config(args)
    model = stage1.load_stage1(args.ckpt)
    sample = pipeline.load_sample(args.sample)
    mask = pipeline.mask_model_fn(model, cfg, "deploy")(sample)
    dest = out_path(args.out)
    io.write_vvol(dest, mask)
    print(f"predict-mask: wrote {dest} ({int(mask.sum())} voxels)")


def cmd_train_inpaint(args) -> None:
    cfg = run_config(args)
    manifest = run_manifest(args)
    manifest.validate(require_splits=("train", "val"))
    mask_fn = None
    if args.mask_source != "gt":
        kind, _, ckpt_path = args.mask_source.partition(":")
        if kind != "predicted" or not ckpt_path:
            raise CliError("--mask-source must be 'gt' or 'predicted:<stage-1 checkpoint>'")
        mask_fn = pipeline.mask_model_fn(stage1.load_stage1(ckpt_path), cfg, "train")
    res = stage2.train_stage2(load_artifacts(manifest, "train"), load_artifacts(manifest, "val"), cfg.stage2,
                              cfg.weights, seed=cfg.seed, damage=cfg.damage, extractor=pipeline.extractor_for(cfg),
                              mask_fn=mask_fn, epochs=args.epochs, out_dir=out_path(args.out))
    print(f"train-inpaint: best epoch {res.best_epoch}, val_total {res.best_val:.6g}")


def cmd_inpaint(args) -> None:
    cfg = run_config(args)
    mode = {"single": "single_step", "ddpm": "ddpm_loop"}[args.mode]
    cfg = replace(cfg, inference=replace(cfg.inference, mode=mode))
    model = stage2.load_stage2(args.ckpt)
    sample = pipeline.load_sample(args.sample)
    mask = io.read_vvol(args.mask) if args.mask else sample.mask
    res = pipeline.inpaint_sample(model, sample, mask, cfg, cfg.seed)
    dest = out_path(args.out)
    pipeline.save_result(dest, res.v_hat, res.c_hat)
    print(f"inpaint: wrote {dest} ({mode})")


def cmd_baseline(args) -> None:
    run_config(args)
    sample = pipeline.load_sample(args.sample)
    mask = io.read_vvol(args.mask) if args.mask else sample.mask
    res = baseline.symmetry_baseline(sample.v_dam, sample.c_dam, mask)
    dest = out_path(args.out)
    pipeline.save_result(dest, res.v_hat, res.c_hat)
    print(f"baseline-symmetry: wrote {dest} (plane {res.meta.get('plane')})")


def _sample_ids(pred: Path) -> list[str] | None:
    if (pred / "v_hat.vvol").is_file():
        return None
    ids = sorted(p.name for p in pred.iterdir() if (p / "v_hat.vvol").is_file())
    if not ids:
        raise CliError(f"no predictions (v_hat.vvol) found under {pred}")
    return ids


def cmd_evaluate(args) -> None:
    run_config(args)
    pred, gt = Path(args.pred), Path(args.gt)
    ids = _sample_ids(pred)
    if ids is None:
        gt_sample = pipeline.load_sample(gt)
        rows = [dict(method=args.method, sample_id=pred.name,
                     **pipeline.evaluate_pair(*pipeline.load_result(pred), gt_sample.v_gt, gt_sample.c_gt))]
    else:
        rows = pipeline.evaluate_dirs({args.method: pred}, gt, ids)
    dest = out_path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    pipeline.write_report(dest, rows)
    print(f"evaluate: {len(rows)} rows -> {dest}")


def cmd_report(args) -> None:
    run_config(args)
    rows = [r for r in pipeline.read_report(args.input) if r["sample_id"] != "mean"]
    dest = out_path(args.per_slice)
    dest.parent.mkdir(parents=True, exist_ok=True)
    pipeline.write_per_slice(dest, rows)
    for r in pipeline.summary_rows(rows):
        print(f"report: {r['method']}: F={r['fscore']:.4f} chamfer={r['chamfer_mm']:.4f} "
              f"psnr={r['psnr_db']:.2f} dB")


def cmd_run_all(args) -> None:
    cfg = run_config(args)
    manifest = run_manifest(args)
    out = out_path(args.out if args.out else cfg.output_dir)
    res = pipeline.run_pipeline(manifest, cfg, out, mask_source=args.mask_source)
    print(f"run-all: report {res.report_path}; ran {', '.join(res.ran) or 'nothing'}; "
          f"skipped {', '.join(res.skipped) or 'nothing'}")


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    common.add_argument("--config", default=None, help="run configuration file")
    common.add_argument("--manifest", "--data", dest="manifest", default=None,
                        help="dataset manifest CSV (default: built-in procedural corpus)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="voxinpaint", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("voxelize", parents=[common], help="OBJ mesh or procedural shape -> VVOL1 volumes")
    s.add_argument("--in", dest="input", required=True, help="OBJ path or procedural:<kind>:<seed>")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_voxelize)

    s = sub.add_parser("synth-damage", parents=[common], help="damage a voxelized object")
    s.add_argument("--in", dest="input", required=True, help="artifact directory or occupancy .vvol")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_damage)

    s = sub.add_parser("train-mask", parents=[common], help="train the slice mask network")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=None)
    s.set_defaults(func=cmd_train_mask)

    s = sub.add_parser("predict-mask", parents=[common], help="predict a damage mask for one sample")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--sample", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict_mask)

    s = sub.add_parser("train-inpaint", parents=[common], help="train the diffusion inpainting network")
    s.add_argument("--mask-source", default="gt", help="gt or predicted:<stage-1 checkpoint>")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=None)
    s.set_defaults(func=cmd_train_inpaint)

    s = sub.add_parser("inpaint", parents=[common], help="inpaint one sample")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--sample", required=True)
    s.add_argument("--mask", default=None, help="mask .vvol (default: the sample's ground-truth mask)")
    s.add_argument("--mode", choices=("single", "ddpm"), default="single")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inpaint)

    s = sub.add_parser("baseline-symmetry", parents=[common], help="mirror-fill baseline for one sample")
    s.add_argument("--sample", required=True)
    s.add_argument("--mask", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("evaluate", parents=[common], help="metrics for predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--method", default="prediction")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", parents=[common], help="per-slice PSNR series from a report CSV")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--per-slice", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run-all", parents=[common], help="full pipeline with resumable stages")
    s.add_argument("--out", default=None, help="run directory (default: config output_dir)")
    s.add_argument("--mask-source", choices=config.MASK_SOURCES, default=None,
                   help="mask used at inference (default: config)")
    s.set_defaults(func=cmd_run_all)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (config.ConfigError, corpus.ManifestError) as exc:
        print(f"voxinpaint {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except pipeline.PipelineError as exc:
        print(f"voxinpaint {args.command}: stage {exc.stage} failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # every other failure is reported against the subcommand's stage
        print(f"voxinpaint {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
