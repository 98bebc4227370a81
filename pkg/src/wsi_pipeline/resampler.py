"""Physical-scale resizing with a separable Lanczos-3 filter.

The scale factor maps a physical field of view to the fixed patch size:
``patch_px`` output pixels spanning ``phi_um`` micrometers of tissue imply
``s = mpp * patch_px / phi_um``. Downscaling widens the kernel support by
``1/s`` for anti-aliasing; the typical factors here are s ~= 0.1-0.75.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyOutput, NonPositiveInput
from .raster import ImageBuffer, quantize_u8

#: resolution band covered by the resolution sweep, micrometers
PHI_RANGE_UM = (300.0, 1000.0)


@dataclass(frozen=True)
class PatchSpec:
    """Geometry of patch extraction at a target physical resolution."""

    phi_um: float = 600.0
    patch_px: int = 224
    stride_fraction: float = 0.5
    coverage_min: float = 0.75

    def __post_init__(self):
        if self.phi_um <= 0:
            raise NonPositiveInput(f"phi_um must be positive, got {self.phi_um}")
        if self.patch_px < 32:
            raise ValueError(f"patch_px must be >= 32, got {self.patch_px}")
        if not 0 < self.stride_fraction <= 1:
            raise ValueError(f"stride_fraction must be in (0, 1], got {self.stride_fraction}")
        if not 0 <= self.coverage_min <= 1:
            raise ValueError(f"coverage_min must be in [0, 1], got {self.coverage_min}")

    @property
    def stride_px(self) -> int:
        return max(1, int(round(self.stride_fraction * self.patch_px)))


def lanczos3_kernel(x):
    """L(x) = sinc(x) * sinc(x/3) for |x| < 3, else 0, with sinc(0) = 1."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    inside = np.abs(x) < 3.0
    xi = x[inside]
    out[inside] = np.sinc(xi) * np.sinc(xi / 3.0)  # np.sinc is sin(pi x)/(pi x)
    return out if out.ndim else float(out)


def scale_factor(phi_um: float, mpp: float, patch_px: int) -> float:
    """Output/input grid ratio so that patch_px pixels span phi_um of tissue."""
    if phi_um <= 0 or mpp <= 0 or patch_px <= 0:
        raise NonPositiveInput(
            f"phi_um={phi_um}, mpp={mpp}, patch_px={patch_px} must all be positive"
        )
    return mpp * patch_px / phi_um


def scaled_size(n_px: int, s: float) -> int:
    return max(1, int(round(n_px * s)))


def _axis_weights(in_n: int, out_n: int) -> np.ndarray:
    """Dense (out_n, in_n) Lanczos-3 weight matrix for one axis.

    Output pixel i samples source coordinate (i + 0.5)/s - 0.5 with
    clamp-to-edge taps and per-pixel weight normalization.
    """
    s = out_n / in_n
    kscale = min(s, 1.0)
    support = 3.0 / kscale
    mat = np.zeros((out_n, in_n), dtype=np.float64)
    for i in range(out_n):
        src = (i + 0.5) / s - 0.5
        lo = math.ceil(src - support)
        hi = math.floor(src + support)
        taps = np.arange(lo, hi + 1)
        w = lanczos3_kernel((taps - src) * kscale)
        w /= w.sum()
        np.add.at(mat[i], np.clip(taps, 0, in_n - 1), w)
    return mat


def resize(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Separable Lanczos-3 resampling (horizontal pass, then vertical).

    Intermediates stay in float64; quantization to 8 bits happens once at
    the end, so the result matches a direct 2-D weighted sum to within one
    intensity level.
    """
    if out_w < 1 or out_h < 1:
        raise EmptyOutput(f"requested output {out_w}x{out_h}")
    if out_w == img.width and out_h == img.height:
        return img
    mh = _axis_weights(img.width, out_w)
    mv = _axis_weights(img.height, out_h)
    src = img.data.astype(np.float64)
    out = np.empty((out_h, out_w, img.channels), dtype=np.float64)
    for c in range(img.channels):
        out[:, :, c] = mv @ (src[:, :, c] @ mh.T)
    return ImageBuffer(quantize_u8(out))


def resize_to_scale(img: ImageBuffer, s: float) -> ImageBuffer:
    """Resize by a uniform scale factor, rounding output dimensions."""
    if s <= 0:
        raise NonPositiveInput(f"scale must be positive, got {s}")
    return resize(img, scaled_size(img.width, s), scaled_size(img.height, s))
