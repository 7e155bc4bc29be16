"""End-to-end orchestration with persisted, resumable stages.

Output layout under the run directory::

    artifacts/<id>/{occupancy,color}.vvol      ground truth per manifest entry
    samples/<sample>/{v_gt,c_gt,v_dam,c_dam,mask}.vvol + provenance.txt
    stage1/best.vckpt, log.csv                 mask network
    masks/<sample>/mask.vvol                   predicted masks
    stage2/best.vckpt, log.csv                 inpainting network
    inpaint/<sample>/{v_hat,c_hat}.vvol
    baseline/<sample>/{v_hat,c_hat}.vvol
    report.csv, per_slice.csv

Each stage directory holds ``stamp.txt``: a fingerprint of the settings and
upstream stamps it was built from, plus content hashes of its outputs.  A
stage whose stamp matches and whose outputs still hash the same is skipped.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import shutil
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import baseline, config, corpus, diffusion, io, metrics, stage1, stage2
from .damage import Sample, synth_damage
from .seeding import derive_seed

log = logging.getLogger(__name__)

STAGES = ("voxelize", "damage", "train-mask", "predict-mask", "train-inpaint", "inpaint", "baseline", "evaluate")
METHODS = ("diffusion", "symmetry")
SAMPLE_FILES = ("v_gt", "c_gt", "v_dam", "c_dam", "mask")
EVAL_SPLITS = ("val", "test")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# ------------------------------------------------------------------ persistence

def save_artifact(directory, artifact: corpus.Artifact) -> None:
    d = Path(directory)
    io.write_vvol(d / "occupancy.vvol", artifact.v_gt)
    io.write_vvol(d / "color.vvol", artifact.c_gt)


def load_artifact_dir(directory, source_id: str | None = None) -> corpus.Artifact:
    d = Path(directory)
    return corpus.load_artifact(corpus.ManifestEntry(source_id or d.name, str(d.resolve()), "test"))


def save_sample(directory, sample: Sample) -> None:
    d = Path(directory)
    for name in SAMPLE_FILES:
        io.write_vvol(d / f"{name}.vvol", getattr(sample, name))
    lines = [f"source_id {sample.source_id}", f"seed {sample.seed}", f"degenerate {int(sample.degenerate)}"]
    lines += [f"{k} {v}" for k, v in sorted(sample.meta.items())]
    (d / "provenance.txt").write_text("\n".join(lines) + "\n")


def load_sample(directory) -> Sample:
    d = Path(directory)
    missing = [n for n in SAMPLE_FILES if not (d / f"{n}.vvol").is_file()]
    if missing:
        raise FileNotFoundError(f"sample directory {d} lacks {', '.join(m + '.vvol' for m in missing)}")
    arrays = {n: io.read_vvol(d / f"{n}.vvol") for n in SAMPLE_FILES}
    prov = {}
    if (d / "provenance.txt").is_file():
        for line in (d / "provenance.txt").read_text().splitlines():
            key, _, value = line.partition(" ")
            prov[key] = value
    return Sample(**arrays, seed=int(prov.get("seed", 0)), source_id=prov.get("source_id", d.name),
                  degenerate=prov.get("degenerate", "0") == "1")


def sample_is_degenerate(directory) -> bool:
    prov = Path(directory) / "provenance.txt"
    if not prov.is_file():
        raise PipelineError("damage", f"missing sample {directory}")
    return "degenerate 1" in prov.read_text().splitlines()


def save_result(directory, v_hat: np.ndarray, c_hat: np.ndarray) -> None:
    d = Path(directory)
    io.write_vvol(d / "v_hat.vvol", v_hat)
    io.write_vvol(d / "c_hat.vvol", c_hat)


def load_result(directory) -> tuple[np.ndarray, np.ndarray]:
    d = Path(directory)
    return io.read_vvol(d / "v_hat.vvol"), io.read_vvol(d / "c_hat.vvol")


# ------------------------------------------------------------------ stamps

def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tree_digest(directory, exclude=("stamp.txt",)) -> str:
    h = hashlib.sha256()
    root = Path(directory)
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in exclude:
            h.update(str(p.relative_to(root)).encode())
            h.update(file_digest(p).encode())
    return h.hexdigest()


def fingerprint(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def section_text(cfg: config.RunConfig, *sections: str) -> str:
    return "\n".join(f"{s}.{k}={config._fmt(get(cfg))}" for s in sections for k, (_, get) in config.SCHEMA[s].items()
                     if not (s == "general" and k == "output_dir"))


def stamp_ok(directory, fp: str) -> bool:
    stamp = Path(directory) / "stamp.txt"
    if not stamp.is_file():
        return False
    lines = stamp.read_text().splitlines()
    return len(lines) == 2 and lines[0] == fp and lines[1] == tree_digest(directory)


def write_stamp(directory, fp: str) -> None:
    Path(directory).mkdir(parents=True, exist_ok=True)
    (Path(directory) / "stamp.txt").write_text(f"{fp}\n{tree_digest(directory)}\n")


# ------------------------------------------------------------------ evaluation / reports

def report_header() -> list[str]:
    return (["method", "sample_id", "chamfer_mm", "fscore", "precision", "recall", "occupied_pred", "occupied_gt",
             "masked_mse", "psnr_db", "overlap_count"] + [f"psnr_z{z:02d}" for z in range(32)])


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.9g}"


def evaluate_pair(v_hat, c_hat, v_gt, c_gt) -> dict:
    """All geometry and color metrics for one prediction; undefined values become NaN."""
    row = {}
    try:
        g = metrics.fscore_1mm(v_hat, v_gt)
        row.update(chamfer_mm=g.chamfer_mm, fscore=g.fscore, precision=g.precision, recall=g.recall,
                   occupied_pred=g.occupied_pred, occupied_gt=g.occupied_gt)
    except metrics.UndefinedMetricError as exc:
        log.warning("geometry metrics undefined: %s", exc)
        row.update(chamfer_mm=math.nan, fscore=math.nan, precision=math.nan, recall=math.nan,
                   occupied_pred=int(np.count_nonzero(v_hat)), occupied_gt=int(np.count_nonzero(v_gt)))
    try:
        c = metrics.masked_color_metrics(v_hat, c_hat, v_gt, c_gt)
        row.update(masked_mse=c.masked_mse, psnr_db=c.psnr_db, overlap_count=c.overlap_count)
        slices = c.per_slice_psnr
    except metrics.UndefinedMetricError as exc:
        log.warning("color metrics undefined: %s", exc)
        row.update(masked_mse=math.nan, psnr_db=math.nan, overlap_count=0)
        slices = (math.nan,) * v_gt.shape[0]
    for z, val in enumerate(slices):
        row[f"psnr_z{z:02d}"] = val
    return row


def summary_rows(rows: list[dict]) -> list[dict]:
    """Per-method means over samples (NaN-aware); ``sample_id`` is ``mean``."""
    out = []
    for method in dict.fromkeys(r["method"] for r in rows):
        group = [r for r in rows if r["method"] == method]
        summary = {"method": method, "sample_id": "mean"}
        for key in report_header()[2:]:
            vals = np.array([float(r[key]) for r in group], dtype=np.float64)
            finite = vals[~np.isnan(vals)]
            summary[key] = float(finite.mean()) if finite.size else math.nan
        out.append(summary)
    return out


def write_report(path, rows: list[dict], with_summary: bool = True) -> None:
    rows = list(rows) + (summary_rows(rows) if with_summary and rows else [])
    header = report_header()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r["method"], r["sample_id"]] + [_num(r[k]) for k in header[2:]])


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_per_slice(path, rows: list[dict]) -> None:
    """Long-format per-slice PSNR: method, sample_id, z, psnr_db."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "sample_id", "z", "psnr_db"])
        for r in rows:
            for z in range(32):
                w.writerow([r["method"], r["sample_id"], z, r[f"psnr_z{z:02d}"]])


# ------------------------------------------------------------------ helpers shared with the CLI

def mask_model_fn(model: stage1.MaskUNet2D, cfg: config.RunConfig, tag: str):
    """Predicted-mask function for a damaged sample; the indicator dropout is seeded per sample."""
    def fn(sample: Sample) -> np.ndarray:
        ind = stage1.coarse_indicator(sample.mask, cfg.stage1.indicator_dropout,
                                      derive_seed(cfg.seed, f"indicator-{tag}", sample.seed, sample.source_id))
        return stage1.predict_volume_mask(model, sample, ind, cfg.stage1.threshold)
    return fn


def inpaint_sample(model, sample: Sample, mask: np.ndarray, cfg: config.RunConfig, seed: int):
    inf = cfg.inference
    return diffusion.infer_inpaint(model, sample.v_dam, sample.c_dam, mask, mode=inf.mode, seed=seed,
                                   schedule=cfg.stage2.schedule, num_steps=inf.ddpm_steps or None,
                                   single_step_t=inf.single_step_t)


def extractor_for(cfg: config.RunConfig) -> diffusion.SliceFeatureExtractor:
    if cfg.perceptual_weights:
        return diffusion.SliceFeatureExtractor.from_checkpoint(cfg.perceptual_weights)
    return diffusion.SliceFeatureExtractor()


def train_artifacts(cfg: config.RunConfig, manifest: corpus.Manifest, artifact_dir: Path, split: str):
    return [load_artifact_dir(artifact_dir / e.source_id, e.source_id) for e in manifest.split(split)]


def stage1_epoch_samples(artifacts: list[corpus.Artifact], cfg: config.RunConfig):
    def samples(epoch: int) -> list[Sample]:
        out = [stage2.realize(a, cfg.damage, derive_seed(cfg.seed, "stage1-damage", epoch, a.source_id))
               for a in artifacts]
        return [s for s in out if not s.degenerate]
    return samples


# ------------------------------------------------------------------ the pipeline

@dataclass
class PipelineResult:
    out_dir: Path
    report_path: Path
    rows: list[dict]
    ran: list[str]
    skipped: list[str]


def run_pipeline(manifest: corpus.Manifest, cfg: config.RunConfig, out_dir=None,
                 mask_source: str | None = None) -> PipelineResult:
    """Run every stage, skipping those whose stamps show they are up to date."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    if mask_source is not None:
        cfg = replace(cfg, inference=replace(cfg.inference, mask_source=mask_source))
    try:
        manifest.validate(require_splits=("train", "val", "test"))
    except corpus.ManifestError as exc:
        raise PipelineError("manifest", str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(config.dump_config(cfg))
    ran, skipped = [], []
    manifest_text = "\n".join(f"{e.source_id},{e.source},{e.split}" for e in manifest.entries)

    def stage(name: str, directory: Path, fp: str, body) -> str:
        if stamp_ok(directory, fp):
            log.info("stage %s: up to date, skipping", name)
            skipped.append(name)
            return fp
        log.info("stage %s: running", name)
        if directory.exists():
            shutil.rmtree(directory)
        directory.mkdir(parents=True)
        try:
            body(directory)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc
        write_stamp(directory, fp)
        ran.append(name)
        return fp

    # 1. ground truth
    art_dir = out / "artifacts"
    fp_vox = fingerprint("voxelize", manifest_text)

    def do_voxelize(d: Path):
        for e in manifest.entries:
            save_artifact(d / e.source_id, corpus.load_artifact(e, manifest.base_dir))
    stage("voxelize", art_dir, fp_vox, do_voxelize)

    # 2. fixed damage realizations for evaluation splits
    sample_dir = out / "samples"
    fp_dmg = fingerprint("damage", fp_vox, section_text(cfg, "general", "damage", "eval"))
    eval_ids: dict[str, list[str]] = {s: [] for s in EVAL_SPLITS}
    for split in EVAL_SPLITS:
        for e in manifest.split(split):
            for k in range(cfg.eval_samples_per_object):
                eval_ids[split].append(e.source_id if cfg.eval_samples_per_object == 1 else f"{e.source_id}__{k}")

    def do_damage(d: Path):
        for split in EVAL_SPLITS:
            for e in manifest.split(split):
                a = load_artifact_dir(art_dir / e.source_id, e.source_id)
                for k in range(cfg.eval_samples_per_object):
                    sid = e.source_id if cfg.eval_samples_per_object == 1 else f"{e.source_id}__{k}"
                    s = synth_damage(a.v_gt, a.c_gt, replace(cfg.damage, seed=derive_seed(cfg.seed, "eval-damage", k, e.source_id)),
                                     source_id=e.source_id)
                    s.meta.update(split=split, realization=k)
                    save_sample(d / sid, s)
    stage("damage", sample_dir, fp_dmg, do_damage)
    for split in EVAL_SPLITS:
        kept = [sid for sid in eval_ids[split] if not sample_is_degenerate(sample_dir / sid)]
        if len(kept) < len(eval_ids[split]):
            log.warning("damage: skipping %d degenerate %s samples", len(eval_ids[split]) - len(kept), split)
        if not kept:
            raise PipelineError("damage", f"every {split} sample is degenerate")
        eval_ids[split] = kept

    # 3. mask network
    s1_dir = out / "stage1"
    fp_s1 = fingerprint("train-mask", fp_dmg, section_text(cfg, "stage1"))

    def do_train_mask(d: Path):
        arts = train_artifacts(cfg, manifest, art_dir, "train")
        val = [load_sample(sample_dir / sid) for sid in eval_ids["val"]]
        stage1.train_stage1(stage1_epoch_samples(arts, cfg), val, cfg.stage1, seed=cfg.seed, out_dir=d)
    stage("train-mask", s1_dir, fp_s1, do_train_mask)

    # 4. predicted masks
    mask_dir = out / "masks"
    fp_masks = fingerprint("predict-mask", fp_s1)

    def do_predict(d: Path):
        model = _load_or_fail("predict-mask", s1_dir / "best.vckpt", stage1.load_stage1)
        fn = mask_model_fn(model, cfg, "deploy")
        for sid in eval_ids["test"]:
            io.write_vvol(d / sid / "mask.vvol", fn(load_sample(sample_dir / sid)))
    stage("predict-mask", mask_dir, fp_masks, do_predict)

    # 5. inpainting network
    s2_dir = out / "stage2"
    s2_deps = [fp_dmg, section_text(cfg, "stage2", "loss")]
    if cfg.stage2_mask_source == "predicted":
        s2_deps.append(fp_s1)
    fp_s2 = fingerprint("train-inpaint", *s2_deps)

    def do_train_inpaint(d: Path):
        arts = train_artifacts(cfg, manifest, art_dir, "train")
        vals = train_artifacts(cfg, manifest, art_dir, "val")
        mask_fn = None
        if cfg.stage2_mask_source == "predicted":
            mask_fn = mask_model_fn(_load_or_fail("train-inpaint", s1_dir / "best.vckpt", stage1.load_stage1),
                                    cfg, "train")
        stage2.train_stage2(arts, vals, cfg.stage2, cfg.weights, seed=cfg.seed, damage=cfg.damage,
                            extractor=extractor_for(cfg), mask_fn=mask_fn, out_dir=d)
    stage("train-inpaint", s2_dir, fp_s2, do_train_inpaint)

    def eval_mask(sid: str, sample: Sample) -> np.ndarray:
        if cfg.inference.mask_source == "gt":
            return sample.mask
        path = mask_dir / sid / "mask.vvol"
        if not path.is_file():
            raise PipelineError("inpaint", f"missing predicted mask {path}; run predict-mask first")
        return io.read_vvol(path)

    mask_fp = fp_masks if cfg.inference.mask_source == "predicted" else fp_dmg

    # 6. diffusion inpainting
    inp_dir = out / "inpaint"
    fp_inp = fingerprint("inpaint", fp_s2, mask_fp, section_text(cfg, "inference"))

    def do_inpaint(d: Path):
        model = _load_or_fail("inpaint", s2_dir / "best.vckpt", stage2.load_stage2)
        for sid in eval_ids["test"]:
            s = load_sample(sample_dir / sid)
            r = inpaint_sample(model, s, eval_mask(sid, s), cfg, derive_seed(cfg.seed, "inpaint", 0, sid))
            save_result(d / sid, r.v_hat, r.c_hat)
    stage("inpaint", inp_dir, fp_inp, do_inpaint)

    # 7. symmetry baseline
    base_dir = out / "baseline"
    fp_base = fingerprint("baseline", mask_fp, cfg.inference.mask_source)

    def do_baseline(d: Path):
        for sid in eval_ids["test"]:
            s = load_sample(sample_dir / sid)
            r = baseline.symmetry_baseline(s.v_dam, s.c_dam, eval_mask(sid, s))
            save_result(d / sid, r.v_hat, r.c_hat)
    stage("baseline", base_dir, fp_base, do_baseline)

    # 8. evaluation
    eval_dir = out / "eval"
    fp_eval = fingerprint("evaluate", fp_inp, fp_base)
    report_path = out / "report.csv"

    def do_evaluate(d: Path):
        rows = evaluate_dirs({"diffusion": inp_dir, "symmetry": base_dir}, sample_dir, eval_ids["test"])
        d.mkdir(parents=True, exist_ok=True)
        write_report(d / "report.csv", rows)
        write_per_slice(d / "per_slice.csv", rows)
    stage("evaluate", eval_dir, fp_eval, do_evaluate)
    for name in ("report.csv", "per_slice.csv"):
        (out / name).write_bytes((eval_dir / name).read_bytes())
    return PipelineResult(out, report_path, read_report(report_path), ran, skipped)


def evaluate_dirs(methods: dict[str, Path], gt_dir: Path, sample_ids: list[str]) -> list[dict]:
    rows = []
    for method, pred_dir in methods.items():
        for sid in sample_ids:
            if not (pred_dir / sid / "v_hat.vvol").is_file():
                raise PipelineError("evaluate", f"missing prediction {pred_dir / sid}")
            v_hat, c_hat = load_result(pred_dir / sid)
            gt = load_sample(gt_dir / sid)
            rows.append({"method": method, "sample_id": sid, **evaluate_pair(v_hat, c_hat, gt.v_gt, gt.c_gt)})
    return rows


def _load_or_fail(stage_name: str, path: Path, loader):
    if not path.is_file():
        raise PipelineError(stage_name, f"missing upstream checkpoint {path}")
    return loader(path)
