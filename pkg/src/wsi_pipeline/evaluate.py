"""Dataset splitting, confusion matrices, per-class metrics, resolution
sweeps and patch-verdict overlays.

Slide ground truth is the most severe RoI label present (HG > LG > HP >
NORM), matching the clinical convention of grading by worst finding.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .aggregate import GroupedClass4, group_of
from .annotations import RoIAnnotation, SlideAnnotationSet, TissueClass6
from .errors import ClassTooSmall, OriginOutOfBounds
from .raster import ImageBuffer, replicate_gray
from .resampler import PatchSpec

#: worst-finding order used for slide ground truth
SEVERITY = {
    GroupedClass4.HG: 3,
    GroupedClass4.LG: 2,
    GroupedClass4.HP: 1,
    GroupedClass4.NORM: 0,
}

#: patch-verdict overlay colors (RGB)
OVERLAY_COLORS = {
    GroupedClass4.HP: (255, 0, 0),
    GroupedClass4.NORM: (255, 255, 255),
    GroupedClass4.LG: (0, 255, 0),
    GroupedClass4.HG: (0, 0, 255),
}


def slide_truth6(annset: SlideAnnotationSet) -> TissueClass6:
    """Most severe RoI label; ties inside a severity tier break by class code."""
    if not annset.rois:
        raise ValueError(f"slide {annset.metadata.slide_id} has no RoIs")
    return max(annset.rois, key=lambda r: (SEVERITY[group_of(r.label)], int(r.label))).label


def slide_truth(annset: SlideAnnotationSet) -> GroupedClass4:
    return group_of(slide_truth6(annset))


# ---------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class SplitSpec:
    test_fraction_per_class: float = 0.10
    val_rois_per_class: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_fraction_per_class < 1:
            raise ValueError(
                f"test fraction must be in (0, 1), got {self.test_fraction_per_class}"
            )
        if self.val_rois_per_class < 0:
            raise ValueError("val_rois_per_class must be >= 0")


@dataclass
class SplitResult:
    train: list[SlideAnnotationSet]  # val RoIs already removed
    val_rois: list[tuple[str, RoIAnnotation]]
    test: list[SlideAnnotationSet]

    def summary(self) -> dict:
        def roi_counts(sets):
            counts = {t: 0 for t in TissueClass6}
            for s in sets:
                for r in s.rois:
                    counts[r.label] += 1
            return counts

        val_counts = {t: 0 for t in TissueClass6}
        for _, roi in self.val_rois:
            val_counts[roi.label] += 1
        return {
            "train_slides": len(self.train),
            "test_slides": len(self.test),
            "train_rois": roi_counts(self.train),
            "val_rois": val_counts,
            "test_rois": roi_counts(self.test),
            "train_rois_total": sum(roi_counts(self.train).values()),
            "val_rois_total": sum(val_counts.values()),
            "test_rois_total": sum(roi_counts(self.test).values()),
        }


def split_dataset(
    slides: Sequence[SlideAnnotationSet],
    spec: SplitSpec,
    test_ids: set[str] | None = None,
) -> SplitResult:
    """Slide-level split: per class, ceil(fraction * n) slides go to test via
    a seeded shuffle; validation RoIs are then drawn from training slides
    only. ``test_ids`` overrides the test selection with an explicit list.
    """
    rng = np.random.default_rng(spec.seed)
    by_class: dict[TissueClass6, list[SlideAnnotationSet]] = {t: [] for t in TissueClass6}
    for annset in slides:
        by_class[slide_truth6(annset)].append(annset)

    if test_ids is None:
        test_ids = set()
        for cls in TissueClass6:
            members = by_class[cls]
            if not members:
                continue
            if len(members) < 2:
                raise ClassTooSmall(cls.label, len(members))
            ids = sorted(s.metadata.slide_id for s in members)
            rng.shuffle(ids)
            n_test = math.ceil(spec.test_fraction_per_class * len(ids))
            test_ids.update(ids[:n_test])

    test = [s for s in slides if s.metadata.slide_id in test_ids]
    train_full = [s for s in slides if s.metadata.slide_id not in test_ids]

    # validation RoIs per class, from training slides only
    val_keys: set[tuple[str, str]] = set()
    val_rois: list[tuple[str, RoIAnnotation]] = []
    for cls in TissueClass6:
        candidates = [
            (s.metadata.slide_id, roi)
            for s in train_full
            for roi in s.rois
            if roi.label == cls
        ]
        order = rng.permutation(len(candidates))
        for idx in order[: spec.val_rois_per_class]:
            slide_id, roi = candidates[int(idx)]
            val_keys.add((slide_id, roi.roi_id))
            val_rois.append((slide_id, roi))

    train = []
    for s in train_full:
        kept = tuple(r for r in s.rois if (s.metadata.slide_id, r.roi_id) not in val_keys)
        train.append(SlideAnnotationSet(metadata=s.metadata, rois=kept))
    return SplitResult(train=train, val_rois=val_rois, test=test)


# ---------------------------------------------------------------------------
# Confusion matrix and metrics


@dataclass
class ConfusionMatrix:
    """4x4 counts, rows = ground truth, cols = predicted (HP, NORM, HG, LG).

    Counts are integers when built from verdict pairs; reconstructions from
    published row fractions may carry real-valued counts.
    """

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        if c.shape != (4, 4):
            raise ValueError(f"confusion matrix must be 4x4, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        self.counts = c

    @staticmethod
    def from_pairs(pairs: Iterable[tuple[GroupedClass4, GroupedClass4]]) -> "ConfusionMatrix":
        counts = np.zeros((4, 4))
        for truth, pred in pairs:
            counts[int(truth), int(pred)] += 1
        return ConfusionMatrix(counts)

    @property
    def row_normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(sums > 0, self.counts / np.where(sums == 0, 1, sums), 0.0)
        return out

    @property
    def zero_rows(self) -> list[GroupedClass4]:
        return [GroupedClass4(i) for i in range(4) if self.counts[i].sum() == 0]

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0


def balanced_accuracy(sensitivity: float, specificity: float) -> float:
    return (sensitivity + specificity) / 2.0


@dataclass(frozen=True)
class ClassMetrics:
    sensitivity: float
    specificity: float
    balanced_accuracy: float
    f1: float
    degenerate: bool = False  # some denominator was zero; affected metrics are 0


@dataclass
class MetricsReport:
    per_class: dict[GroupedClass4, ClassMetrics]
    macro: ClassMetrics
    zero_rows: list[GroupedClass4] = field(default_factory=list)

    def as_dict(self) -> dict:
        def cm_dict(m: ClassMetrics) -> dict:
            return {
                "sensitivity": m.sensitivity,
                "specificity": m.specificity,
                "balanced_accuracy": m.balanced_accuracy,
                "f1": m.f1,
                "degenerate": m.degenerate,
            }

        return {
            "per_class": {c.label: cm_dict(m) for c, m in self.per_class.items()},
            "macro": cm_dict(self.macro),
            "zero_rows": [c.label for c in self.zero_rows],
        }


def per_class_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """One-vs-rest sensitivity, specificity, balanced accuracy and F1.

    Zero-denominator metrics report 0 with the degenerate flag set, keeping
    reports machine-readable.
    """
    if cm.total == 0:
        raise ValueError("metrics need at least one sample")
    counts = cm.counts
    per_class = {}
    for i, cls in enumerate(GroupedClass4):
        tp = counts[i, i]
        fn = counts[i].sum() - tp
        fp = counts[:, i].sum() - tp
        tn = cm.total - tp - fn - fp
        degenerate = False

        if tp + fn > 0:
            sens = tp / (tp + fn)
        else:
            sens, degenerate = 0.0, True
        if tn + fp > 0:
            spec = tn / (tn + fp)
        else:
            spec, degenerate = 0.0, True
        if 2 * tp + fp + fn > 0:
            f1 = 2 * tp / (2 * tp + fp + fn)
        else:
            f1, degenerate = 0.0, True
        per_class[cls] = ClassMetrics(
            sensitivity=float(sens),
            specificity=float(spec),
            balanced_accuracy=balanced_accuracy(float(sens), float(spec)),
            f1=float(f1),
            degenerate=degenerate,
        )
    macro = ClassMetrics(
        sensitivity=float(np.mean([m.sensitivity for m in per_class.values()])),
        specificity=float(np.mean([m.specificity for m in per_class.values()])),
        balanced_accuracy=float(np.mean([m.balanced_accuracy for m in per_class.values()])),
        f1=float(np.mean([m.f1 for m in per_class.values()])),
        degenerate=any(m.degenerate for m in per_class.values()),
    )
    return MetricsReport(per_class=per_class, macro=macro, zero_rows=cm.zero_rows)


# ---------------------------------------------------------------------------
# Resolution x preprocessing sweep


def run_sweep(
    resolutions: Sequence[float],
    modes: Sequence[str],
    runner: Callable[[float, str], dict],
) -> list[dict]:
    """One row per (phi, mode) in fixed grid order; the runner maps a grid
    cell to its metrics dict. Determinism is the runner's contract: it must
    be a pure function of (phi, mode) and its own seeds."""
    if not resolutions or not modes:
        raise ValueError("resolution and mode grids must be non-empty")
    rows = []
    for phi in resolutions:
        for mode in modes:
            row = {"phi_um": phi, "mode": mode}
            row.update(runner(phi, mode))
            rows.append(row)
    return rows


def write_sweep_csv(rows: Sequence[dict], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    fields = list(rows[0].keys())
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_report_json(obj: dict, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Patch-verdict overlays


def render_overlay(
    slide: ImageBuffer,
    patch_verdicts: Sequence[tuple[tuple[int, int], GroupedClass4]],
    spec: PatchSpec,
) -> ImageBuffer:
    """Draw a colored box at each patch center (HP red, NORM white, LG
    green, HG blue) plus one dashed square of side patch_px as a scale
    reference."""
    if slide.channels == 1:
        slide = replicate_gray(slide)
    canvas = slide.data.copy()
    h, w = canvas.shape[:2]

    for (ox, oy), _ in patch_verdicts:
        if ox < 0 or oy < 0 or ox + spec.patch_px > w or oy + spec.patch_px > h:
            raise OriginOutOfBounds(
                f"patch at ({ox}, {oy}) exceeds slide bounds {w}x{h}"
            )

    # scale reference: dashed black square, anchored near the top-left corner
    margin, dash = 4, 6
    side = min(spec.patch_px, w - 2 * margin, h - 2 * margin)
    ts = np.arange(side)
    on = (ts // dash) % 2 == 0
    xs, ys = margin + ts[on], margin + ts[on]
    canvas[margin, xs] = 0
    canvas[margin + side - 1, xs] = 0
    canvas[ys, margin] = 0
    canvas[ys, margin + side - 1] = 0

    box = max(3, spec.patch_px // 8)
    half = box // 2
    for (ox, oy), cls in patch_verdicts:
        cx, cy = ox + spec.patch_px // 2, oy + spec.patch_px // 2
        x0, x1 = max(0, cx - half), min(w, cx + half + 1)
        y0, y1 = max(0, cy - half), min(h, cy + half + 1)
        canvas[y0:y1, x0:x1] = OVERLAY_COLORS[cls]
    return ImageBuffer(canvas)
