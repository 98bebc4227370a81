"""Core 8-bit image buffer and color transforms.

Pixel data is stored row-major with interleaved channels (numpy C order,
shape ``(height, width, channels)``), 1 or 3 channels. Buffers are frozen
after construction so transforms are safe to run from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import WrongChannelCount

#: Rec. 601 Luma weights (R, G, B)
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero (np.round would round half to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_u8(x: np.ndarray) -> np.ndarray:
    """Round (half away from zero) and clamp float samples to [0, 255] uint8."""
    return np.clip(round_half_away(np.asarray(x, dtype=np.float64)), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class ImageBuffer:
    """Immutable 8-bit raster, 1 (gray) or 3 (RGB) interleaved channels."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image dimensions must be >= 1")
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 samples, got {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def require_channels(self, n: int) -> None:
        if self.channels != n:
            raise WrongChannelCount(f"expected {n}-channel image, got {self.channels}")


def to_luma(img: ImageBuffer, weights: tuple[float, float, float] = LUMA_WEIGHTS) -> ImageBuffer:
    """Luma grayscale, Rec. 601 by default: y = round(0.299 R + 0.587 G + 0.114 B)."""
    img.require_channels(3)
    w = np.array(weights, dtype=np.float64)
    y = img.data.astype(np.float64) @ w
    return ImageBuffer(quantize_u8(y)[:, :, np.newaxis])


def replicate_gray(img: ImageBuffer) -> ImageBuffer:
    """Replicate a single gray channel into 3 identical channels."""
    img.require_channels(1)
    return ImageBuffer(np.repeat(img.data, 3, axis=2))


def read_png(path: Path | str) -> ImageBuffer:
    with Image.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.uint8)[:, :, np.newaxis]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return ImageBuffer(arr)


def write_png(img: ImageBuffer, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if img.channels == 1:
        Image.fromarray(img.data[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(img.data, mode="RGB").save(path, format="PNG")
