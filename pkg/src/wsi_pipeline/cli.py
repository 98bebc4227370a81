"""Command-line entry point wiring the whole pipeline.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
Log level comes from the WSI_PIPELINE_LOG env var (error, warn, info,
debug); machine-readable summaries go to stdout with --json.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import GroupedClass4, make_verdict, write_verdicts
from .annotations import SlideAnnotationSet, metadata_from_json, summarize_dataset
from .classify import BaselineModel, BaselineScorer, OracleScorer, write_scores_csv
from .config import RunConfig, default_config_toml, load_config
from .errors import ConfigInvalid, PipelineError
from .evaluate import render_overlay, run_sweep, write_report_json, write_sweep_csv
from .pipeline import (
    CorpusSlide,
    evaluate_run,
    load_corpus,
    load_manifest_patches,
    make_scorer,
    score_patches,
    split_corpus,
    sweep_cell_runner,
    tile_corpus_to_dir,
    tile_slide,
    train_baseline_model,
)
from .raster import write_png
from .synth import SynthSpec, generate_synthetic_corpus
from .tiler import read_manifest

log = logging.getLogger(__name__)

LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

DEFAULT_SWEEP_PHIS = "300,400,500,600,700,800,900,1000"


def setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("WSI_PIPELINE_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wsi-pipeline",
        description="WSI preprocessing, patch scoring and evaluation pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--print-config", action="store_true", help="print the default TOML config and exit"
    )
    sub = parser.add_subparsers(dest="command")

    def common(p: argparse.ArgumentParser, needs_corpus: bool = True) -> None:
        p.add_argument("--config", type=Path, help="TOML run config; flags override it")
        p.add_argument("--json", action="store_true", help="print a JSON summary to stdout")
        p.add_argument("--seed", type=int, help="global seed override")
        p.add_argument("--workers", type=int, help="parallel worker cap (1 = serial)")
        p.add_argument("--output-dir", type=Path, help="output directory override")
        if needs_corpus:
            p.add_argument(
                "--corpus",
                type=Path,
                help="corpus root holding slides/, annotations/, metadata/",
            )
        p.add_argument("--phi", type=float, help="patch resolution override, micrometers")
        p.add_argument("--mode", choices=["rgb", "gray", "macenko"], help="preprocessing mode")
        p.add_argument("--scorer", help="baseline | oracle | external:<scores.csv>")

    p = sub.add_parser("validate", help="validate config and corpus inputs")
    common(p)

    p = sub.add_parser("summarize", help="per-class slide/RoI/area composition")
    common(p)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--classes", type=int, default=6, help="number of tissue classes (max 6)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slide-px", type=int, default=1024)
    p.add_argument("--mpp", type=float, default=2.0)
    p.add_argument("--color-cast", action="store_true", help="per-slide chroma cast (Luma-preserving)")
    p.add_argument("--two-blob-prob", type=float, default=0.3)
    p.add_argument("--blob-radius-frac", type=float, default=0.38)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("tile", help="split the corpus and write patches + manifest")
    common(p)

    p = sub.add_parser("train-baseline", help="train the baseline scorer from a manifest")
    common(p, needs_corpus=False)
    p.add_argument("--manifest", type=Path, help="patch manifest (default <output>/manifest.jsonl)")
    p.add_argument("--model-out", type=Path, help="model path (default <output>/baseline.json)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--augment", action="store_true", help="add one augmented copy per patch")

    p = sub.add_parser("score", help="score manifest patches to the CSV protocol")
    common(p, needs_corpus=False)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--model", type=Path, help="baseline model JSON")
    p.add_argument("--scores-out", type=Path, help="default <output>/scores.csv")
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="all")

    p = sub.add_parser("infer-slide", help="slide-level verdict for one slide image")
    common(p, needs_corpus=False)
    p.add_argument("--slide", type=Path, required=True, help="slide PNG")
    p.add_argument("--metadata", type=Path, required=True, help="slide metadata JSON")
    p.add_argument("--model", type=Path, help="baseline model JSON")
    p.add_argument("--verdict-out", type=Path, help="default <output>/verdict.jsonl")
    p.add_argument("--overlay-out", type=Path, help="also render the patch-verdict overlay PNG")

    p = sub.add_parser("evaluate", help="split, train if needed, infer and report metrics")
    common(p)

    p = sub.add_parser("sweep", help="resolution x preprocessing grid")
    common(p)
    p.add_argument("--phis", default=DEFAULT_SWEEP_PHIS, help="comma list of phi values")
    p.add_argument("--modes", default="rgb,gray,macenko", help="comma list of modes")

    p = sub.add_parser("overlay", help="render the patch-verdict overlay for one slide")
    common(p, needs_corpus=False)
    p.add_argument("--slide", type=Path, required=True)
    p.add_argument("--metadata", type=Path, required=True)
    p.add_argument("--model", type=Path, help="baseline model JSON")
    p.add_argument("--overlay-out", type=Path, required=True)

    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "corpus", None):
        root = Path(args.corpus)
        cfg = replace(
            cfg,
            slides_dir=str(root / "slides"),
            annotations_dir=str(root / "annotations"),
            metadata_dir=str(root / "metadata"),
        )
    if getattr(args, "output_dir", None):
        cfg = replace(cfg, output_dir=str(args.output_dir))
    if getattr(args, "phi", None) is not None:
        cfg = replace(cfg, patch=replace(cfg.patch, phi_um=args.phi))
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    if getattr(args, "scorer", None):
        cfg = replace(cfg, scorer=args.scorer)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, split=replace(cfg.split, seed=args.seed))
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, workers=args.workers)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    if getattr(args, "step_size", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, step_size=args.step_size))
    if getattr(args, "augment", False):
        cfg = replace(cfg, train=replace(cfg.train, augment=True))
    return cfg


def emit(args, summary: dict, human_lines: list[str]) -> None:
    if getattr(args, "json", False):
        print(json.dumps(summary, sort_keys=True))
    else:
        for line in human_lines:
            print(line)


# ---------------------------------------------------------------------------
# Command implementations


def cmd_validate(args) -> int:
    cfg = resolve_config(args)
    cfg.validate(check_paths=True)
    corpus = load_corpus(cfg)
    summary = {
        "ok": True,
        "slides": len(corpus),
        "rois": sum(len(c.annotations.rois) for c in corpus),
        "mode": cfg.mode,
        "phi_um": cfg.patch.phi_um,
        "scorer": cfg.scorer,
    }
    emit(args, summary, [f"ok: {summary['slides']} slides, {summary['rois']} RoIs"])
    return 0


def cmd_summarize(args) -> int:
    cfg = resolve_config(args)
    cfg.validate(check_paths=True)
    corpus = load_corpus(cfg)
    summary = summarize_dataset(c.annotations for c in corpus)
    lines = [f"{'class':8} {'slides':>7} {'rois':>6} {'area_cm2':>10}"]
    for cls, tally in summary.per_class.items():
        lines.append(
            f"{cls.label:8} {tally.slide_count:7d} {tally.roi_count:6d} {tally.area_cm2:10.4f}"
        )
    lines.append(
        f"{'total':8} {summary.total_slides:7d} {summary.total_rois:6d} {summary.total_area_cm2:10.4f}"
    )
    emit(args, summary.as_dict(), lines)
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_slides_per_class=args.per_class,
        seed=args.seed,
        slide_px=args.slide_px,
        mpp=args.mpp,
        n_classes=args.classes,
        color_cast=args.color_cast,
        two_blob_prob=args.two_blob_prob,
        blob_radius_frac=args.blob_radius_frac,
    )
    index = generate_synthetic_corpus(args.out, spec)
    emit(args, index, [f"wrote {len(index['slide_ids'])} slides under {args.out}"])
    return 0


def cmd_tile(args) -> int:
    cfg = resolve_config(args)
    cfg.validate(check_paths=True)
    corpus = load_corpus(cfg)
    split = split_corpus(corpus, cfg)
    records = tile_corpus_to_dir(corpus, split, cfg, cfg.output_dir)
    counts = {}
    for rec in records:
        counts[rec["split"]] = counts.get(rec["split"], 0) + 1
    summary = {
        "manifest": str(Path(cfg.output_dir) / "manifest.jsonl"),
        "patches": counts,
        "phi_um": cfg.patch.phi_um,
        "mode": cfg.mode,
    }
    emit(
        args,
        summary,
        [f"manifest: {summary['manifest']}", f"patches by split: {counts}"],
    )
    return 0


def cmd_train_baseline(args) -> int:
    cfg = resolve_config(args)
    manifest_path = args.manifest or Path(cfg.output_dir) / "manifest.jsonl"
    records = read_manifest(manifest_path)
    patches = load_manifest_patches(records, manifest_path.parent, split="train")
    model = train_baseline_model(patches, cfg)
    model_out = args.model_out or Path(cfg.output_dir) / "baseline.json"
    Path(model_out).parent.mkdir(parents=True, exist_ok=True)
    model.save(model_out)
    summary = {
        "model": str(model_out),
        "n_patches": len(patches),
        "initial_loss": model.training_log[0] if model.training_log else None,
        "final_loss": model.training_log[-1] if model.training_log else None,
    }
    if summary["initial_loss"] is None:
        lines = [f"model: {model_out} (0 epochs, zero-initialized)"]
    else:
        lines = [
            f"model: {model_out}",
            f"trained on {len(patches)} patches, loss "
            f"{summary['initial_loss']:.4f} -> {summary['final_loss']:.4f}",
        ]
    emit(args, summary, lines)
    return 0


def cmd_score(args) -> int:
    cfg = resolve_config(args)
    manifest_path = args.manifest or Path(cfg.output_dir) / "manifest.jsonl"
    records = read_manifest(manifest_path)
    wanted = None if args.split == "all" else args.split
    records = [r for r in records if wanted is None or r.get("split") == wanted]
    patches = load_manifest_patches(records, manifest_path.parent)
    if args.model:
        scorer = BaselineScorer(BaselineModel.load(args.model))
    elif cfg.scorer == "oracle":
        scorer = OracleScorer()
    else:
        scorer = make_scorer(cfg, manifest=records)
    scores = score_patches(patches, scorer, cfg.workers)
    out = args.scores_out or Path(cfg.output_dir) / "scores.csv"
    write_scores_csv(
        ((rec["patch_id"], sc.probs) for rec, sc in zip(records, scores)), out
    )
    summary = {"scores": str(out), "rows": len(records), "scorer": scorer.name}
    emit(args, summary, [f"wrote {len(records)} rows to {out}"])
    return 0


def _single_slide(args) -> CorpusSlide:
    metadata = metadata_from_json(Path(args.metadata).read_text(encoding="utf-8"))
    annset = SlideAnnotationSet(metadata=metadata, rois=())
    return CorpusSlide(annotations=annset, slide_path=args.slide)


def _slide_patch_scores(args, cfg):
    from .pipeline import reference_profile

    slide = _single_slide(args)
    patches = tile_slide(slide, cfg, reference_profile(cfg))
    if not patches:
        raise PipelineError(f"slide {slide.slide_id} produced no tissue patches")
    if args.model:
        scorer = BaselineScorer(BaselineModel.load(args.model))
    elif cfg.scorer == "oracle":
        scorer = OracleScorer()
    else:
        records = [
            {"patch_id": p.patch_id} for p in patches
        ]
        scorer = make_scorer(cfg, manifest=records)
    return slide, patches, score_patches(patches, scorer, cfg.workers)


def cmd_infer_slide(args) -> int:
    cfg = resolve_config(args)
    slide, patches, scores = _slide_patch_scores(args, cfg)
    verdict = make_verdict(slide.slide_id, scores)
    out = args.verdict_out or Path(cfg.output_dir) / "verdict.jsonl"
    write_verdicts([verdict], out)
    if args.overlay_out:
        _write_overlay(slide, patches, scores, cfg, args.overlay_out)
    summary = {
        "slide_id": slide.slide_id,
        "n_patches": verdict.n_patches,
        "predicted": verdict.predicted.label,
        "grouped_scores": list(verdict.grouped_scores4),
        "verdict_file": str(out),
    }
    emit(
        args,
        summary,
        [f"{slide.slide_id}: {verdict.predicted.label} from {verdict.n_patches} patches -> {out}"],
    )
    return 0


def _write_overlay(slide, patches, scores, cfg, out_path) -> None:
    image = slide.image()
    from .resampler import scale_factor, scaled_size, resize

    s = scale_factor(cfg.patch.phi_um, slide.annotations.metadata.mpp, cfg.patch.patch_px)
    rescaled = resize(image, scaled_size(image.width, s), scaled_size(image.height, s))
    patch_verdicts = []
    for patch, score in zip(patches, scores):
        arr = score.as_array()
        grouped = np.array([arr[0], arr[1], arr[2] + arr[4], arr[3] + arr[5]])
        patch_verdicts.append((patch.origin_px, GroupedClass4(int(np.argmax(grouped)))))
    overlay = render_overlay(rescaled, patch_verdicts, cfg.patch)
    write_png(overlay, out_path)


def cmd_overlay(args) -> int:
    cfg = resolve_config(args)
    slide, patches, scores = _slide_patch_scores(args, cfg)
    _write_overlay(slide, patches, scores, cfg, args.overlay_out)
    summary = {"overlay": str(args.overlay_out), "n_patches": len(patches)}
    emit(args, summary, [f"overlay with {len(patches)} patch boxes -> {args.overlay_out}"])
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    cfg.validate(check_paths=True)
    corpus = load_corpus(cfg)
    result = evaluate_run(corpus, cfg)
    out_dir = Path(cfg.output_dir)
    write_report_json(result.as_dict(), out_dir / "evaluation.json")
    write_verdicts(result.verdicts, out_dir / "verdicts.jsonl")
    summary = result.as_dict()
    summary["report_file"] = str(out_dir / "evaluation.json")
    emit(
        args,
        summary,
        [
            f"slide accuracy: {result.slide_accuracy:.3f} over {len(result.verdicts)} test slides",
            f"macro balanced accuracy: {result.report['macro']['balanced_accuracy']:.3f}",
            f"report: {out_dir / 'evaluation.json'}",
        ],
    )
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    cfg.validate(check_paths=True)
    corpus = load_corpus(cfg)
    phis = [float(x) for x in args.phis.split(",") if x]
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in ("rgb", "gray", "macenko"):
            raise ConfigInvalid(f"unknown mode {m!r} in --modes")
    rows = run_sweep(phis, modes, sweep_cell_runner(corpus, cfg))
    out_dir = Path(cfg.output_dir)
    write_sweep_csv(rows, out_dir / "sweep.csv")
    write_report_json({"rows": rows}, out_dir / "sweep.json")
    summary = {"rows": len(rows), "csv": str(out_dir / "sweep.csv")}
    emit(args, summary, [f"{len(rows)} sweep rows -> {out_dir / 'sweep.csv'}"])
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "summarize": cmd_summarize,
    "synth": cmd_synth,
    "tile": cmd_tile,
    "train-baseline": cmd_train_baseline,
    "score": cmd_score,
    "infer-slide": cmd_infer_slide,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "overlay": cmd_overlay,
}


def main(argv=None) -> int:
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(default_config_toml(), end="")
        return 0
    if not args.command:
        parser.print_help()
        return 1
    try:
        return COMMANDS[args.command](args)
    except ConfigInvalid as exc:
        log.error("invalid configuration: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        log.error("runtime error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
