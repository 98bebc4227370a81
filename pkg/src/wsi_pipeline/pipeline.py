"""Orchestration: corpus loading, preprocessing modes, training tiling,
whole-slide inference and the resolution sweep.

Everything here is a deterministic function of (corpus, config, seed).
Worker threads only parallelize per-slide work; results are merged in
slide order so any worker count produces byte-identical outputs.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .aggregate import GroupedClass4, SlideVerdict, group_of, make_verdict
from .annotations import SlideAnnotationSet, TissueClass6, load_annotation_set
from .augment import apply_augmentation, derive_seed
from .classify import (
    BaselineModel,
    BaselineScorer,
    ClassScores,
    ExternalScores,
    FocalLossConfig,
    OracleScorer,
    class_weights,
    external_scores_load,
    train_baseline,
)
from .config import RunConfig
from .errors import ConfigInvalid, DegenerateStains, InsufficientTissue
from .evaluate import (
    ConfusionMatrix,
    SplitResult,
    per_class_metrics,
    slide_truth,
    slide_truth6,
    split_dataset,
)
from .raster import ImageBuffer, read_png, to_luma, write_png
from .resampler import resize, scale_factor, scaled_size
from .stainnorm import (
    MacenkoParams,
    StainProfile,
    default_reference_profile,
    estimate_stain_profile,
    load_profile,
    normalize,
)
from .tiler import (
    Patch,
    RegionContext,
    extract_roi_patches,
    extract_slide_patches,
    manifest_record,
    rasterize_mask,
    roi_bbox_px,
    write_manifest,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorpusSlide:
    annotations: SlideAnnotationSet
    slide_path: Path

    @property
    def slide_id(self) -> str:
        return self.annotations.metadata.slide_id

    def image(self) -> ImageBuffer:
        return read_png(self.slide_path)


def load_corpus(cfg: RunConfig) -> list[CorpusSlide]:
    slides_dir, annotations_dir, metadata_dir = cfg.corpus_paths()
    out = []
    for meta_path in sorted(metadata_dir.glob("*.json")):
        sid = meta_path.stem
        xml_path = annotations_dir / f"{sid}.ndpa.xml"
        png_path = slides_dir / f"{sid}.png"
        if not xml_path.exists():
            raise ConfigInvalid(f"missing annotation file for slide {sid}: {xml_path}")
        if not png_path.exists():
            raise ConfigInvalid(f"missing slide image for slide {sid}: {png_path}")
        out.append(CorpusSlide(load_annotation_set(xml_path, meta_path), png_path))
    if not out:
        raise ConfigInvalid(f"no slides found under {metadata_dir}")
    return out


def split_corpus(corpus: Sequence[CorpusSlide], cfg: RunConfig) -> SplitResult:
    return split_dataset([c.annotations for c in corpus], cfg.split)


def _ordered_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def reference_profile(cfg: RunConfig) -> StainProfile:
    if cfg.reference_profile == "builtin":
        return default_reference_profile()
    return load_profile(cfg.reference_profile)


# ---------------------------------------------------------------------------
# Preprocessing + tiling


def _macenko_patch(patch: Patch, ref: StainProfile, params: MacenkoParams) -> Patch:
    """Per-patch Macenko normalization; glass or degenerate patches pass through."""
    try:
        profile = estimate_stain_profile(patch.pixels, params)
    except (InsufficientTissue, DegenerateStains):
        return patch
    return replace(patch, pixels=normalize(patch.pixels, profile, ref, params))


def _region_macenko(region: ImageBuffer, cfg: RunConfig, ref: StainProfile) -> ImageBuffer:
    try:
        profile = estimate_stain_profile(region, cfg.macenko)
    except (InsufficientTissue, DegenerateStains) as exc:
        log.warning("per-slide macenko skipped: %s", exc)
        return region
    return normalize(region, profile, ref, cfg.macenko)


def _postprocess_patches(patches: list[Patch], cfg: RunConfig, ref: StainProfile) -> list[Patch]:
    if cfg.mode == "macenko" and not cfg.per_slide_macenko:
        return [_macenko_patch(p, ref, cfg.macenko) for p in patches]
    return patches


def tile_roi(
    slide: CorpusSlide,
    roi_index: int,
    image: ImageBuffer,
    cfg: RunConfig,
    ref: StainProfile,
) -> list[Patch]:
    """Rescale one RoI's bounding-box crop to the target physical scale and
    extract windows that are mostly inside the annotated lesion."""
    md = slide.annotations.metadata
    roi = slide.annotations.rois[roi_index]
    s = scale_factor(cfg.patch.phi_um, md.mpp, cfg.patch.patch_px)
    x0, y0, w, h = roi_bbox_px(roi.contour, md)
    crop = ImageBuffer(np.ascontiguousarray(image.data[y0 : y0 + h, x0 : x0 + w]))
    if cfg.mode == "gray":
        crop = to_luma(crop)
    region = resize(crop, scaled_size(w, s), scaled_size(h, s))
    if cfg.mode == "macenko" and cfg.per_slide_macenko:
        region = _region_macenko(region, cfg, ref)
    mask = rasterize_mask(roi.contour, md, s)
    ctx = RegionContext(
        slide_id=md.slide_id,
        roi_id=roi.roi_id,
        label=roi.label,
        bbox_origin_px=(x0, y0),
        scale_xy=(region.width / w, region.height / h),
        metadata=md,
    )
    patches = extract_roi_patches(region, mask, cfg.patch, ctx)
    return _postprocess_patches(patches, cfg, ref)


def tile_slide(slide: CorpusSlide, cfg: RunConfig, ref: StainProfile) -> list[Patch]:
    """Rescale the whole slide and extract tissue-covered windows."""
    md = slide.annotations.metadata
    s = scale_factor(cfg.patch.phi_um, md.mpp, cfg.patch.patch_px)
    image = slide.image()
    if cfg.mode == "gray":
        image = to_luma(image)
    rescaled = resize(image, scaled_size(image.width, s), scaled_size(image.height, s))
    if cfg.mode == "macenko" and cfg.per_slide_macenko:
        rescaled = _region_macenko(rescaled, cfg, ref)
    ctx = RegionContext(
        slide_id=md.slide_id,
        roi_id=None,
        label=None,
        bbox_origin_px=(0, 0),
        scale_xy=(rescaled.width / image.width, rescaled.height / image.height),
        metadata=md,
    )
    patches = extract_slide_patches(rescaled, cfg.patch, cfg.tissue, ctx)
    return _postprocess_patches(patches, cfg, ref)


def tile_training_patches(
    corpus: Sequence[CorpusSlide], split: SplitResult, cfg: RunConfig
) -> tuple[list[Patch], list[Patch]]:
    """(train, val) labeled patches from the training slides' RoIs."""
    ref = reference_profile(cfg)
    by_id = {c.slide_id: c for c in corpus}
    val_keys = {(sid, roi.roi_id) for sid, roi in split.val_rois}
    train_slide_ids = [s.metadata.slide_id for s in split.train]

    def tile_one(slide_id: str) -> tuple[list[Patch], list[Patch]]:
        slide = by_id[slide_id]
        image = slide.image()
        train_out, val_out = [], []
        for idx, roi in enumerate(slide.annotations.rois):
            bucket = val_out if (slide_id, roi.roi_id) in val_keys else train_out
            bucket.extend(tile_roi(slide, idx, image, cfg, ref))
        return train_out, val_out

    train_patches, val_patches = [], []
    for tr, va in _ordered_map(tile_one, train_slide_ids, cfg.workers):
        train_patches.extend(tr)
        val_patches.extend(va)
    return train_patches, val_patches


def tile_test_patches(
    corpus: Sequence[CorpusSlide], split: SplitResult, cfg: RunConfig
) -> dict[str, list[Patch]]:
    """Whole-slide inference patches for every test slide, keyed by slide id."""
    ref = reference_profile(cfg)
    by_id = {c.slide_id: c for c in corpus}
    test_ids = [s.metadata.slide_id for s in split.test]
    results = _ordered_map(lambda sid: tile_slide(by_id[sid], cfg, ref), test_ids, cfg.workers)
    return dict(zip(test_ids, results))


def tile_corpus_to_dir(
    corpus: Sequence[CorpusSlide], split: SplitResult, cfg: RunConfig, out_dir: Path | str
) -> list[dict]:
    """Write patch PNGs plus the JSONL manifest (records carry a split tag)."""
    out_dir = Path(out_dir)
    train_patches, val_patches = tile_training_patches(corpus, split, cfg)
    test_by_slide = tile_test_patches(corpus, split, cfg)

    records = []
    for tag, patches in (
        ("train", train_patches),
        ("val", val_patches),
        ("test", [p for sid in test_by_slide for p in test_by_slide[sid]]),
    ):
        for patch in patches:
            rel = f"patches/{patch.patch_id.replace(':', '_')}.png"
            write_png(patch.pixels, out_dir / rel)
            rec = manifest_record(patch, cfg.patch, rel, cfg.mode)
            rec["split"] = tag
            records.append(rec)
    write_manifest(records, out_dir / "manifest.jsonl")
    return records


def load_manifest_patches(
    records: Sequence[dict], base_dir: Path | str, split: str | None = None
) -> list[Patch]:
    """Materialize manifest rows back into Patch objects (pixels from PNG)."""
    base_dir = Path(base_dir)
    out = []
    for rec in records:
        if split is not None and rec.get("split") != split:
            continue
        label = TissueClass6.from_label(rec["label"]) if rec["label"] else None
        out.append(
            Patch(
                pixels=read_png(base_dir / rec["path"]),
                slide_id=rec["slide_id"],
                roi_id=rec["roi_id"],
                label=label,
                origin_px=tuple(rec["origin_px"]),
                origin_nm=tuple(rec["origin_nm"]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Training and scoring


def focal_config(cfg: RunConfig, train_patches: Sequence[Patch]) -> FocalLossConfig:
    """Loss config per the run settings; inverse-frequency alpha uses the
    per-class counts of the training patches' source RoIs."""
    if cfg.train.alpha_mode == "uniform":
        return FocalLossConfig(gamma=cfg.train.gamma)
    roi_keys = {(p.slide_id, p.roi_id, int(p.label)) for p in train_patches if p.label is not None}
    counts = [0] * len(TissueClass6)
    for _, _, label in roi_keys:
        counts[label] += 1
    if any(c == 0 for c in counts):
        # fall back to patch counts if a class has no whole RoI represented
        counts = [max(1, sum(1 for p in train_patches if p.label == t)) for t in TissueClass6]
    return FocalLossConfig(gamma=cfg.train.gamma, alpha=tuple(class_weights(counts)))


def augmented_training_set(patches: Sequence[Patch], cfg: RunConfig) -> list[Patch]:
    """Optionally extend the training set with one augmented copy per patch."""
    if not cfg.train.augment:
        return list(patches)
    out = list(patches)
    for i, patch in enumerate(patches):
        out.append(apply_augmentation(patch, cfg.augment_policy, derive_seed(cfg.seed, i)))
    return out


def train_baseline_model(train_patches: Sequence[Patch], cfg: RunConfig) -> BaselineModel:
    patches = augmented_training_set(train_patches, cfg)
    return train_baseline(
        patches,
        cfg=focal_config(cfg, train_patches),
        step_size=cfg.train.step_size,
        epochs=cfg.train.epochs,
        seed=cfg.seed,
    )


def make_scorer(
    cfg: RunConfig,
    model: BaselineModel | None = None,
    manifest=None,
    truth_by_slide: dict[str, TissueClass6] | None = None,
):
    if cfg.scorer == "oracle":
        return OracleScorer(truth_by_slide, phi_um=cfg.patch.phi_um, mode=cfg.mode)
    if cfg.scorer == "baseline":
        if model is None:
            raise ConfigInvalid("baseline scorer needs a trained model")
        return BaselineScorer(model, phi_um=cfg.patch.phi_um, mode=cfg.mode)
    if cfg.scorer.startswith("external:"):
        path = cfg.scorer[len("external:") :]
        if manifest is None:
            raise ConfigInvalid("external scorer needs the patch manifest")
        return ExternalScores(
            external_scores_load(path, manifest), phi_um=cfg.patch.phi_um, mode=cfg.mode
        )
    raise ConfigInvalid(f"unknown scorer {cfg.scorer!r}")


def score_patches(patches: Sequence[Patch], scorer, workers: int = 1) -> list[ClassScores]:
    return _ordered_map(scorer.score, patches, workers)


# ---------------------------------------------------------------------------
# Evaluation flow


@dataclass
class RunResult:
    verdicts: list[SlideVerdict]
    truths: dict[str, GroupedClass4]
    confusion: ConfusionMatrix
    report: dict
    patch_stats: dict

    @property
    def slide_accuracy(self) -> float:
        return self.confusion.accuracy

    def as_dict(self) -> dict:
        return {
            "slide_accuracy": self.slide_accuracy,
            "slide_metrics": self.report,
            "patch_stats": self.patch_stats,
            "confusion_counts": self.confusion.counts.tolist(),
            "confusion_row_normalized": self.confusion.row_normalized.tolist(),
            "verdicts": [
                {
                    "slide_id": v.slide_id,
                    "n_patches": v.n_patches,
                    "predicted": v.predicted.label,
                    "truth": self.truths[v.slide_id].label,
                }
                for v in self.verdicts
            ],
        }


def patch_level_stats(patches: Sequence[Patch], scores: Sequence[ClassScores]) -> dict:
    """Plain and balanced accuracy of labeled patches (6-class and grouped)."""
    labeled = [(p, s) for p, s in zip(patches, scores) if p.label is not None]
    if not labeled:
        return {"n_patches": 0}
    hits6 = {t: [0, 0] for t in TissueClass6}
    hits4 = {g: [0, 0] for g in GroupedClass4}
    for patch, score in labeled:
        pred6 = int(np.argmax(score.as_array()))
        truth6 = int(patch.label)
        hits6[TissueClass6(truth6)][0] += pred6 == truth6
        hits6[TissueClass6(truth6)][1] += 1
        arr = score.as_array()
        grouped = np.array([arr[0], arr[1], arr[2] + arr[4], arr[3] + arr[5]])
        pred4 = int(np.argmax(grouped))
        truth4 = int(group_of(patch.label))
        hits4[GroupedClass4(truth4)][0] += pred4 == truth4
        hits4[GroupedClass4(truth4)][1] += 1
    n = len(labeled)
    acc6 = sum(v[0] for v in hits6.values()) / n
    acc4 = sum(v[0] for v in hits4.values()) / n
    recalls6 = [v[0] / v[1] for v in hits6.values() if v[1]]
    recalls4 = [v[0] / v[1] for v in hits4.values() if v[1]]
    return {
        "n_patches": n,
        "accuracy6": acc6,
        "accuracy4": acc4,
        "balanced_accuracy6": float(np.mean(recalls6)),
        "balanced_accuracy4": float(np.mean(recalls4)),
    }


def infer_test_slides(
    corpus: Sequence[CorpusSlide],
    split: SplitResult,
    cfg: RunConfig,
    scorer,
    test_patches: dict[str, list[Patch]] | None = None,
) -> tuple[list[SlideVerdict], dict[str, GroupedClass4]]:
    if test_patches is None:
        test_patches = tile_test_patches(corpus, split, cfg)
    truths = {s.metadata.slide_id: slide_truth(s) for s in split.test}
    verdicts = []
    for sid in sorted(test_patches):
        patches = test_patches[sid]
        if not patches:
            log.warning("slide %s produced no tissue patches; skipped", sid)
            continue
        verdicts.append(make_verdict(sid, score_patches(patches, scorer, cfg.workers)))
    return verdicts, truths


def evaluate_run(corpus: Sequence[CorpusSlide], cfg: RunConfig) -> RunResult:
    """Full deterministic flow: split, tile, train (if needed), infer, score."""
    split = split_corpus(corpus, cfg)
    _assert_disjoint(split)

    model = None
    patch_stats = {"n_patches": 0}
    manifest = None
    if cfg.scorer == "baseline":
        train_patches, val_patches = tile_training_patches(corpus, split, cfg)
        model = train_baseline_model(train_patches, cfg)
        eval_patches = val_patches or train_patches
        scorer = BaselineScorer(model)
        patch_stats = patch_level_stats(
            eval_patches, score_patches(eval_patches, scorer, cfg.workers)
        )
    test_patches = tile_test_patches(corpus, split, cfg)
    if cfg.scorer.startswith("external:"):
        manifest = [
            manifest_record(p, cfg.patch, "", cfg.mode)
            for sid in sorted(test_patches)
            for p in test_patches[sid]
        ]
    truth6 = {s.metadata.slide_id: slide_truth6(s) for s in split.test}
    scorer = make_scorer(cfg, model=model, manifest=manifest, truth_by_slide=truth6)

    verdicts, truths = infer_test_slides(corpus, split, cfg, scorer, test_patches)
    pairs = [(truths[v.slide_id], v.predicted) for v in verdicts]
    confusion = ConfusionMatrix.from_pairs(pairs)
    report = per_class_metrics(confusion).as_dict() if pairs else {}
    return RunResult(
        verdicts=verdicts,
        truths=truths,
        confusion=confusion,
        report=report,
        patch_stats=patch_stats,
    )


def _assert_disjoint(split: SplitResult) -> None:
    train_ids = {s.metadata.slide_id for s in split.train}
    test_ids = {s.metadata.slide_id for s in split.test}
    overlap = train_ids & test_ids
    if overlap:
        raise ConfigInvalid(f"split leaks slides across train/test: {sorted(overlap)}")
    val_outside = {sid for sid, _ in split.val_rois} - train_ids
    if val_outside:
        raise ConfigInvalid(f"validation RoIs from non-training slides: {sorted(val_outside)}")


def sweep_cell_runner(corpus: Sequence[CorpusSlide], cfg: RunConfig):
    """Runner for evaluate.run_sweep: one full evaluate_run per (phi, mode)."""

    def run(phi: float, mode: str) -> dict:
        cell_cfg = replace(cfg, patch=replace(cfg.patch, phi_um=phi), mode=mode)
        result = evaluate_run(corpus, cell_cfg)
        row = {
            "slide_accuracy": round(result.slide_accuracy, 6),
            "slide_macro_balanced_accuracy": round(
                result.report["macro"]["balanced_accuracy"], 6
            ),
            "slide_macro_f1": round(result.report["macro"]["f1"], 6),
            "n_test_slides": len(result.verdicts),
        }
        for key in ("accuracy6", "accuracy4", "balanced_accuracy6", "balanced_accuracy4"):
            if key in result.patch_stats:
                row[f"patch_{key}"] = round(result.patch_stats[key], 6)
        row["n_eval_patches"] = result.patch_stats.get("n_patches", 0)
        return row

    return run
