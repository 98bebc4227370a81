"""RoI mask rasterization and sliding-window patch extraction.

Training patches come from annotated RoIs (kept when mostly inside the
mask); inference patches come from the whole rescaled slide, filtered by a
glass/tissue rule on mean optical density. Window lattices are row-major
from (0, 0) with no partial windows, so output is deterministic and
independent of worker count.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .annotations import Contour, SlideMetadata, TissueClass6
from .errors import DegenerateContour
from .raster import ImageBuffer
from .resampler import PatchSpec, scaled_size

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TissueFilterParams:
    """Glass/background rejection for whole-slide inference."""

    od_threshold: float = 0.10  # minimum mean OD for a pixel to count as tissue
    min_tissue_fraction: float = 0.20

    def __post_init__(self):
        if self.od_threshold < 0:
            raise ValueError(f"od_threshold must be >= 0, got {self.od_threshold}")
        if not 0 <= self.min_tissue_fraction <= 1:
            raise ValueError(
                f"min_tissue_fraction must be in [0, 1], got {self.min_tissue_fraction}"
            )


@dataclass(frozen=True)
class Patch:
    """One extracted window with its provenance.

    ``origin_px`` is the window's top-left corner in rescaled-region
    coordinates; ``origin_nm`` the same corner in slide physical space.
    """

    pixels: ImageBuffer
    slide_id: str
    origin_px: tuple[int, int]
    origin_nm: tuple[int, int]
    roi_id: str | None = None
    label: TissueClass6 | None = None

    @property
    def patch_id(self) -> str:
        region = self.roi_id if self.roi_id is not None else "wsi"
        return f"{self.slide_id}:{region}:{self.origin_px[0]}:{self.origin_px[1]}"


@dataclass(frozen=True)
class RegionContext:
    """Maps rescaled-region pixel coordinates back to slide physical space."""

    slide_id: str = ""
    roi_id: str | None = None
    label: TissueClass6 | None = None
    bbox_origin_px: tuple[int, int] = (0, 0)
    scale_xy: tuple[float, float] = (1.0, 1.0)
    metadata: SlideMetadata | None = None

    def origin_nm(self, x_rescaled: int, y_rescaled: int) -> tuple[int, int]:
        if self.metadata is None:
            return (0, 0)
        x_px = self.bbox_origin_px[0] + x_rescaled / self.scale_xy[0]
        y_px = self.bbox_origin_px[1] + y_rescaled / self.scale_xy[1]
        x_nm, y_nm = self.metadata.px_to_nm(x_px, y_px)
        return int(round(x_nm)), int(round(y_nm))


def roi_bbox_px(contour: Contour, metadata: SlideMetadata) -> tuple[int, int, int, int]:
    """Pixel-space bounding box (x0, y0, w, h) of a contour, clamped to the slide."""
    min_x, min_y, max_x, max_y = contour.bounds_nm()
    x0f, y0f = metadata.nm_to_px(min_x, min_y)
    x1f, y1f = metadata.nm_to_px(max_x, max_y)
    x0 = max(0, int(np.floor(x0f)))
    y0 = max(0, int(np.floor(y0f)))
    x1 = min(metadata.width_px, int(np.ceil(x1f)))
    y1 = min(metadata.height_px, int(np.ceil(y1f)))
    if x1 <= x0 or y1 <= y0:
        raise DegenerateContour("contour bounding box is empty within the slide")
    return x0, y0, x1 - x0, y1 - y0


def _points_in_contour(xs_nm: np.ndarray, ys_nm: np.ndarray, contour: Contour) -> np.ndarray:
    """Vectorized even-odd containment with inclusive boundaries.

    Matches point_in_roi exactly; used for rasterizing whole grids.
    """
    xs = np.asarray(xs_nm, dtype=np.float64)
    ys = np.asarray(ys_nm, dtype=np.float64)
    inside = np.zeros(xs.shape, dtype=bool)
    boundary = np.zeros(xs.shape, dtype=bool)
    pts = contour.points
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
        on_seg = (
            (cross == 0)
            & (xs >= min(x1, x2))
            & (xs <= max(x1, x2))
            & (ys >= min(y1, y2))
            & (ys <= max(y1, y2))
        )
        boundary |= on_seg
        crosses = (y1 > ys) != (y2 > ys)
        if np.any(crosses):
            with np.errstate(divide="ignore", invalid="ignore"):
                x_at = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (xs < x_at)
    return inside | boundary


def rasterize_mask(contour: Contour, metadata: SlideMetadata, s: float) -> np.ndarray:
    """Boolean mask over the rescaled RoI bounding box.

    A bit is set iff the rescaled pixel's center maps inside the contour.
    Per-axis scales are implied by the rounded output dimensions so the mask
    aligns exactly with resize() of the bounding-box crop.
    """
    x0, y0, w, h = roi_bbox_px(contour, metadata)
    wr, hr = scaled_size(w, s), scaled_size(h, s)
    sx, sy = wr / w, hr / h
    ii, jj = np.meshgrid(np.arange(wr), np.arange(hr))
    px = x0 + (ii + 0.5) / sx
    py = y0 + (jj + 0.5) / sy
    nm_per_px = metadata.nm_per_px
    ox, oy = metadata.origin_offset_nm
    return _points_in_contour(px * nm_per_px + ox, py * nm_per_px + oy, contour)


def _window_lattice(width: int, height: int, patch_px: int, stride: int):
    xs = range(0, width - patch_px + 1, stride)
    ys = range(0, height - patch_px + 1, stride)
    for y in ys:
        for x in xs:
            yield x, y


def _window_fractions(flag_map: np.ndarray, patch_px: int, stride: int) -> list[tuple[int, int, float]]:
    """(x, y, fraction-of-set-flags) for every full window on the stride lattice."""
    h, w = flag_map.shape
    if w < patch_px or h < patch_px:
        return []
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    sat[1:, 1:] = np.cumsum(np.cumsum(flag_map.astype(np.int64), axis=0), axis=1)
    area = patch_px * patch_px
    out = []
    for x, y in _window_lattice(w, h, patch_px, stride):
        count = (
            sat[y + patch_px, x + patch_px]
            - sat[y, x + patch_px]
            - sat[y + patch_px, x]
            + sat[y, x]
        )
        out.append((x, y, count / area))
    return out


def _crop(region: ImageBuffer, x: int, y: int, side: int) -> ImageBuffer:
    return ImageBuffer(np.ascontiguousarray(region.data[y : y + side, x : x + side]))


def extract_roi_patches(
    region: ImageBuffer,
    mask: np.ndarray,
    spec: PatchSpec,
    ctx: RegionContext | None = None,
) -> list[Patch]:
    """Sliding windows over a rescaled RoI region, kept when the in-mask
    pixel fraction reaches spec.coverage_min. Returns [] with a warning when
    the region is smaller than one patch."""
    if mask.shape != (region.height, region.width):
        raise ValueError(
            f"mask shape {mask.shape} does not match region {(region.height, region.width)}"
        )
    ctx = ctx or RegionContext()
    if region.width < spec.patch_px or region.height < spec.patch_px:
        log.warning(
            "region %dx%d smaller than patch size %d; no patches",
            region.width,
            region.height,
            spec.patch_px,
        )
        return []
    patches = []
    for x, y, frac in _window_fractions(mask, spec.patch_px, spec.stride_px):
        if frac >= spec.coverage_min:
            patches.append(
                Patch(
                    pixels=_crop(region, x, y, spec.patch_px),
                    slide_id=ctx.slide_id,
                    roi_id=ctx.roi_id,
                    label=ctx.label,
                    origin_px=(x, y),
                    origin_nm=ctx.origin_nm(x, y),
                )
            )
    return patches


def tissue_map(slide: ImageBuffer, tf: TissueFilterParams, io: float = 255.0) -> np.ndarray:
    """Boolean per-pixel tissue flag: mean OD across channels above threshold."""
    od = -np.log10((slide.data.astype(np.float64) + 1.0) / io)
    return od.mean(axis=2) > tf.od_threshold


def extract_slide_patches(
    slide: ImageBuffer,
    spec: PatchSpec,
    tf: TissueFilterParams = TissueFilterParams(),
    ctx: RegionContext | None = None,
) -> list[Patch]:
    """Sliding windows over a rescaled whole slide, kept when the tissue
    pixel fraction reaches tf.min_tissue_fraction."""
    ctx = ctx or RegionContext()
    if slide.width < spec.patch_px or slide.height < spec.patch_px:
        return []
    flags = tissue_map(slide, tf)
    patches = []
    for x, y, frac in _window_fractions(flags, spec.patch_px, spec.stride_px):
        if frac >= tf.min_tissue_fraction:
            patches.append(
                Patch(
                    pixels=_crop(slide, x, y, spec.patch_px),
                    slide_id=ctx.slide_id,
                    roi_id=None,
                    label=None,
                    origin_px=(x, y),
                    origin_nm=ctx.origin_nm(x, y),
                )
            )
    return patches


# ---------------------------------------------------------------------------
# Patch manifests (JSON Lines)


def manifest_record(patch: Patch, spec: PatchSpec, png_path: str, mode: str) -> dict:
    return {
        "patch_id": patch.patch_id,
        "slide_id": patch.slide_id,
        "roi_id": patch.roi_id,
        "label": patch.label.label if patch.label is not None else None,
        "origin_px": list(patch.origin_px),
        "origin_nm": list(patch.origin_nm),
        "phi_um": spec.phi_um,
        "mode": mode,
        "path": png_path,
    }


def write_manifest(records: Iterable[dict], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path: Path | str) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
