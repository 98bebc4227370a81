"""Training-time augmentation: optional flips plus one random photometric
or geometric op, fully determined by an integer seed."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .raster import ImageBuffer, round_half_away
from .tiler import Patch

#: canonical op order; policies keep their op subset in this order so the
#: uniform draw is stable across runs
ALL_OPS = ("rotation", "equalization", "solarization", "inversion", "contrast")


@dataclass(frozen=True)
class AugmentPolicy:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    op_set: tuple[str, ...] = ALL_OPS
    rotation_angles: tuple[int, ...] = (90, 180, 270)
    solarize_threshold: int = 128
    contrast_factor_range: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        if not 0 <= self.p_hflip <= 1 or not 0 <= self.p_vflip <= 1:
            raise ValueError("flip probabilities must be in [0, 1]")
        unknown = set(self.op_set) - set(ALL_OPS)
        if unknown:
            raise ValueError(f"unknown ops: {sorted(unknown)}")
        if not self.op_set:
            raise ValueError("op_set must not be empty")
        ordered = tuple(op for op in ALL_OPS if op in self.op_set)
        object.__setattr__(self, "op_set", ordered)
        if any(a not in (90, 180, 270) for a in self.rotation_angles):
            raise ValueError("rotation_angles must be right angles")


def hflip(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(img.data[:, ::-1].copy())


def vflip(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(img.data[::-1].copy())


def rotate90(img: ImageBuffer, k: int) -> ImageBuffer:
    """Exact k x 90-degree counter-clockwise rotation, k in {1, 2, 3}."""
    if k not in (1, 2, 3):
        raise ValueError(f"k must be in {{1, 2, 3}}, got {k}")
    return ImageBuffer(np.rot90(img.data, k, axes=(0, 1)).copy())


def invert(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(255 - img.data)


def solarize(img: ImageBuffer, threshold: int = 128) -> ImageBuffer:
    data = img.data
    return ImageBuffer(np.where(data >= threshold, 255 - data, data))


def adjust_contrast(img: ImageBuffer, factor: float) -> ImageBuffer:
    """v -> clamp(mean + factor * (v - mean)); pivot is the whole-image mean."""
    if factor <= 0:
        raise ValueError(f"contrast factor must be positive, got {factor}")
    data = img.data.astype(np.float64)
    mean = data.mean()
    out = mean + factor * (data - mean)
    return ImageBuffer(np.clip(round_half_away(out), 0, 255).astype(np.uint8))


def equalize(img: ImageBuffer) -> ImageBuffer:
    """Classical per-channel histogram equalization.

    lut(v) = round((cdf(v) - cdf_min) / (n - cdf_min) * 255) with cdf_min the
    first non-zero cdf value; a single-valued channel maps to itself.
    """
    out = np.empty_like(img.data)
    n = img.height * img.width
    for c in range(img.channels):
        chan = img.data[:, :, c]
        hist = np.bincount(chan.ravel(), minlength=256)
        cdf = np.cumsum(hist)
        cdf_min = cdf[np.nonzero(hist)[0][0]]
        denom = n - cdf_min
        if denom == 0:
            out[:, :, c] = chan
            continue
        lut = round_half_away((cdf - cdf_min) / denom * 255.0).astype(np.uint8)
        out[:, :, c] = lut[chan]
    return ImageBuffer(out)


def derive_seed(global_seed: int, index: int) -> int:
    """Stable per-patch seed, independent of Python hash randomization."""
    digest = hashlib.sha256(f"{global_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def apply_augmentation(patch: Patch, policy: AugmentPolicy, rng_seed: int) -> Patch:
    """Draw flips independently, then exactly one op uniformly from the
    policy's op set (with that op's own parameter draw)."""
    rng = np.random.default_rng(rng_seed)
    img = patch.pixels
    if rng.random() < policy.p_hflip:
        img = hflip(img)
    if rng.random() < policy.p_vflip:
        img = vflip(img)
    op = policy.op_set[int(rng.integers(len(policy.op_set)))]
    if op == "rotation":
        angle = policy.rotation_angles[int(rng.integers(len(policy.rotation_angles)))]
        img = rotate90(img, angle // 90)
    elif op == "equalization":
        img = equalize(img)
    elif op == "solarization":
        img = solarize(img, policy.solarize_threshold)
    elif op == "inversion":
        img = invert(img)
    elif op == "contrast":
        lo, hi = policy.contrast_factor_range
        img = adjust_contrast(img, float(rng.uniform(lo, hi)))
    return replace(patch, pixels=img)
