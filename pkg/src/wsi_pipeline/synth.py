"""Deterministic synthetic tissue corpus.

Real scans are private, so end-to-end runs use procedurally textured
slides: one or two blob-shaped tissue regions per slide on a glass
background, filled with a two-stain concentration field whose structure
(nuclear blob density, stromal band frequency and amplitude, overall stain
strength) is class-specific. The signatures are chosen so the grouped
classes remain separable for the handcrafted-feature baseline after
grayscale conversion and physical-scale resampling.

An optional per-slide color cast simulates scanner/staining variation: a
chroma-plane rotation and gain that preserves Luma exactly (before
clamping), so grayscale pipelines are immune to it by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import (
    Contour,
    RoIAnnotation,
    SlideAnnotationSet,
    SlideMetadata,
    TissueClass6,
    metadata_to_json,
    serialize_annotations,
)
from .augment import derive_seed
from .raster import LUMA_WEIGHTS, ImageBuffer, quantize_u8
from .stainnorm import default_reference_profile


@dataclass(frozen=True)
class ClassTexture:
    """Stain-field signature of one tissue class."""

    base_nuclear: float  # background nuclear-stain concentration
    base_stromal: float  # background stromal-stain concentration
    nuclei_density: float  # blobs per tissue pixel
    nuclei_radius: float  # blob sigma, px
    nuclei_strength: float  # blob amplitude (nuclear stain)
    band_freq: float  # stromal band cycles across the slide
    band_amp: float  # stromal band amplitude
    band_wobble: float  # waviness of bands (villous vs tubular structure)


# Grouped separability drives the constants: NORM bright and smooth, HP
# bright with high-frequency serration, LG mid-dark with moderate texture,
# HG dark with dense nuclei. The tubular/tubulo-villous pair inside each
# grade differs only in band wobble, mirroring how hard that distinction is.
CLASS_TEXTURES = {
    TissueClass6.HP: ClassTexture(0.06, 0.30, 0.00012, 3.0, 0.55, 42.0, 0.40, 0.2),
    TissueClass6.NORM: ClassTexture(0.05, 0.22, 0.00006, 3.0, 0.40, 5.0, 0.06, 0.1),
    TissueClass6.TA_HG: ClassTexture(0.46, 0.36, 0.0030, 4.5, 0.95, 9.0, 0.16, 0.2),
    TissueClass6.TA_LG: ClassTexture(0.22, 0.34, 0.0009, 4.0, 0.70, 14.0, 0.22, 0.2),
    TissueClass6.TVA_HG: ClassTexture(0.46, 0.36, 0.0030, 4.5, 0.95, 9.0, 0.16, 3.0),
    TissueClass6.TVA_LG: ClassTexture(0.22, 0.34, 0.0009, 4.0, 0.70, 14.0, 0.22, 3.0),
}

GLASS_OD = 0.004


@dataclass(frozen=True)
class SynthSpec:
    n_slides_per_class: int = 10
    seed: int = 0
    slide_px: int = 1024
    mpp: float = 2.0  # micrometers per pixel of the synthetic scan
    n_classes: int = 6
    color_cast: bool = False
    cast_angle_deg: tuple[float, float] = (20.0, 50.0)
    cast_gain: tuple[float, float] = (0.75, 1.35)
    two_blob_prob: float = 0.3  # 0 keeps every RoI large enough for phi=1000
    blob_radius_frac: float = 0.38

    def __post_init__(self):
        if self.n_slides_per_class < 1:
            raise ValueError("need at least one slide per class")
        if not 1 <= self.n_classes <= 6:
            raise ValueError("n_classes must be in 1..6")
        if self.slide_px < 512:
            raise ValueError("slides below 512 px leave no room for patches")


def _blob_mask_and_contour(rng, cx, cy, radius, slide_px, nm_per_px):
    """Analytic wobbly-disk tissue region plus its polygon annotation."""
    wobble3 = rng.uniform(0.06, 0.14)
    wobble5 = rng.uniform(0.04, 0.10)
    ph3, ph5 = rng.uniform(0, 2 * np.pi, size=2)

    def r_of(theta):
        return radius * (1.0 + wobble3 * np.sin(3 * theta + ph3) + wobble5 * np.sin(5 * theta + ph5))

    yy, xx = np.mgrid[0:slide_px, 0:slide_px]
    dx = xx - cx + 0.5
    dy = yy - cy + 0.5
    theta = np.arctan2(dy, dx)
    mask = np.hypot(dx, dy) <= r_of(theta)

    angles = np.linspace(0, 2 * np.pi, 72, endpoint=False)
    rr = r_of(angles)
    px = cx + rr * np.cos(angles)
    py = cy + rr * np.sin(angles)
    points = tuple(
        (int(round(x * nm_per_px)), int(round(y * nm_per_px))) for x, y in zip(px, py)
    )
    return mask, Contour(points)


def _texture_fields(rng, mask, tex: ClassTexture, slide_px):
    """Nuclear and stromal concentration fields inside the tissue mask."""
    c_nuc = np.zeros((slide_px, slide_px))
    c_str = np.zeros((slide_px, slide_px))

    # stromal bands: oriented sinusoid with optional waviness
    angle = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:slide_px, 0:slide_px]
    u = (xx * np.cos(angle) + yy * np.sin(angle)) / slide_px
    v = (-xx * np.sin(angle) + yy * np.cos(angle)) / slide_px
    wave = u + tex.band_wobble * 0.02 * np.sin(2 * np.pi * 3.0 * v + phase)
    bands = 0.5 + 0.5 * np.sin(2 * np.pi * tex.band_freq * wave + phase)
    c_str += tex.base_stromal + tex.band_amp * bands

    # nuclear blobs
    c_nuc += tex.base_nuclear
    n_nuclei = rng.poisson(tex.nuclei_density * mask.sum())
    sigma = tex.nuclei_radius / 2.0
    half = int(np.ceil(3 * sigma))
    k = np.arange(-half, half + 1)
    bump = np.exp(-(k[:, None] ** 2 + k[None, :] ** 2) / (2 * sigma**2))
    ys, xs = np.nonzero(mask)
    if len(ys) and n_nuclei:
        pick = rng.integers(0, len(ys), size=n_nuclei)
        for yc, xc in zip(ys[pick], xs[pick]):
            y0, y1 = max(0, yc - half), min(slide_px, yc + half + 1)
            x0, x1 = max(0, xc - half), min(slide_px, xc + half + 1)
            c_nuc[y0:y1, x0:x1] += tex.nuclei_strength * bump[
                y0 - yc + half : y1 - yc + half, x0 - xc + half : x1 - xc + half
            ]

    # mild multiplicative speckle so histograms are not degenerate
    speckle = 1.0 + 0.05 * rng.standard_normal((slide_px, slide_px))
    return c_nuc * speckle, c_str * speckle


def _luma_preserving_cast(rgb_f: np.ndarray, rng, spec: SynthSpec) -> np.ndarray:
    """Rotate and scale the chroma plane; Luma is unchanged before clamping."""
    wr, wg, wb = LUMA_WEIGHTS
    angle = np.deg2rad(rng.uniform(*spec.cast_angle_deg)) * rng.choice([-1.0, 1.0])
    gain = rng.uniform(*spec.cast_gain)
    y = rgb_f @ np.array(LUMA_WEIGHTS)
    cr = rgb_f[:, :, 0] - y
    cb = rgb_f[:, :, 2] - y
    cr2 = gain * (cr * np.cos(angle) - cb * np.sin(angle))
    cb2 = gain * (cr * np.sin(angle) + cb * np.cos(angle))
    r = y + cr2
    b = y + cb2
    g = (y - wr * r - wb * b) / wg
    return np.stack([r, g, b], axis=2)


def synth_slide(spec: SynthSpec, cls: TissueClass6, index: int) -> tuple[SlideAnnotationSet, ImageBuffer]:
    """One deterministic synthetic slide with its annotation set."""
    rng = np.random.default_rng(derive_seed(spec.seed, int(cls) * 100_003 + index))
    slide_px = spec.slide_px
    nm_per_px = spec.mpp * 1000.0
    tex = CLASS_TEXTURES[cls]

    n_blobs = 2 if rng.random() < spec.two_blob_prob else 1
    blobs = []
    if n_blobs == 1:
        cx = slide_px * rng.uniform(0.44, 0.56)
        cy = slide_px * rng.uniform(0.44, 0.56)
        blobs.append((cx, cy, slide_px * spec.blob_radius_frac))
    else:
        for k in range(2):
            cx = slide_px * (0.27 + 0.46 * k) + slide_px * rng.uniform(-0.02, 0.02)
            cy = slide_px * rng.uniform(0.42, 0.58)
            blobs.append((cx, cy, slide_px * spec.blob_radius_frac * 0.68))

    od = np.full((slide_px, slide_px, 3), GLASS_OD)
    od += 0.002 * rng.standard_normal((slide_px, slide_px, 1))

    profile = default_reference_profile()
    stain_nuclear = profile.stain_matrix[:, 1]  # classical hematoxylin direction
    stain_stromal = profile.stain_matrix[:, 0]

    rois = []
    for bi, (cx, cy, radius) in enumerate(blobs):
        mask, contour = _blob_mask_and_contour(rng, cx, cy, radius, slide_px, nm_per_px)
        c_nuc, c_str = _texture_fields(rng, mask, tex, slide_px)
        field = (
            c_nuc[:, :, None] * stain_nuclear[None, None, :]
            + c_str[:, :, None] * stain_stromal[None, None, :]
        )
        od = np.where(mask[:, :, None], field + GLASS_OD, od)
        rois.append(RoIAnnotation(roi_id=f"roi-{bi + 1}", label=cls, contour=contour))

    rgb_f = 255.0 * np.power(10.0, -np.clip(od, 0.0, None)) - 1.0
    if spec.color_cast:
        rgb_f = _luma_preserving_cast(rgb_f, rng, spec)
    image = ImageBuffer(quantize_u8(rgb_f))

    slide_id = f"{cls.label.replace('.', '_').lower()}_{index:03d}"
    metadata = SlideMetadata(
        slide_id=slide_id, width_px=slide_px, height_px=slide_px, mpp=spec.mpp
    )
    return SlideAnnotationSet(metadata=metadata, rois=tuple(rois)), image


def generate_synthetic_corpus(out_dir: Path | str, spec: SynthSpec = SynthSpec()) -> dict:
    """Write slides/, annotations/ and metadata/ under out_dir.

    Fully determined by the SynthSpec (seed included): regenerating with the
    same spec produces byte-identical files.
    """
    from .raster import write_png  # local import to keep module load light

    out_dir = Path(out_dir)
    (out_dir / "slides").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    (out_dir / "metadata").mkdir(parents=True, exist_ok=True)

    slide_ids = []
    classes = list(TissueClass6)[: spec.n_classes]
    for cls in classes:
        for index in range(spec.n_slides_per_class):
            annset, image = synth_slide(spec, cls, index)
            sid = annset.metadata.slide_id
            write_png(image, out_dir / "slides" / f"{sid}.png")
            (out_dir / "annotations" / f"{sid}.ndpa.xml").write_text(
                serialize_annotations(annset), encoding="utf-8"
            )
            (out_dir / "metadata" / f"{sid}.json").write_text(
                metadata_to_json(annset.metadata), encoding="utf-8"
            )
            slide_ids.append(sid)

    index = {
        "slide_ids": slide_ids,
        "n_slides_per_class": spec.n_slides_per_class,
        "n_classes": spec.n_classes,
        "seed": spec.seed,
        "slide_px": spec.slide_px,
        "mpp": spec.mpp,
        "color_cast": spec.color_cast,
    }
    (out_dir / "corpus.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return index
