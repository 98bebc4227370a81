"""Independent reference implementations used to freeze expected values.

Nothing here imports the production code paths it is used to check.
"""

from __future__ import annotations

import math

import numpy as np


def lanczos3_ref(x: float) -> float:
    if abs(x) >= 3.0:
        return 0.0
    if x == 0.0:
        return 1.0
    a = math.pi * x
    b = math.pi * x / 3.0
    return (math.sin(a) / a) * (math.sin(b) / b)


def resize_direct_2d(data: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Direct (non-separable) 2-D weighted-sum Lanczos-3 resize.

    Joint 2-D weight normalization and a single final quantization; edge
    handling is clamp-to-edge like the production path.
    """
    in_h, in_w = data.shape[:2]
    sx, sy = out_w / in_w, out_h / in_h
    kx, ky = min(sx, 1.0), min(sy, 1.0)
    sup_x, sup_y = 3.0 / kx, 3.0 / ky

    x_taps, x_weights = [], []
    for i in range(out_w):
        src = (i + 0.5) / sx - 0.5
        taps = np.arange(math.ceil(src - sup_x), math.floor(src + sup_x) + 1)
        x_taps.append(np.clip(taps, 0, in_w - 1))
        x_weights.append(np.array([lanczos3_ref((t - src) * kx) for t in taps]))
    y_taps, y_weights = [], []
    for j in range(out_h):
        src = (j + 0.5) / sy - 0.5
        taps = np.arange(math.ceil(src - sup_y), math.floor(src + sup_y) + 1)
        y_taps.append(np.clip(taps, 0, in_h - 1))
        y_weights.append(np.array([lanczos3_ref((t - src) * ky) for t in taps]))

    src_f = data.astype(np.float64)
    out = np.empty((out_h, out_w, data.shape[2]), dtype=np.float64)
    for j in range(out_h):
        rows = src_f[y_taps[j]]
        for i in range(out_w):
            w2d = np.outer(y_weights[j], x_weights[i])
            w2d /= w2d.sum()
            block = rows[:, x_taps[i]]
            out[j, i] = np.tensordot(w2d, block, axes=([0, 1], [0, 1]))
    return np.clip(np.sign(out) * np.floor(np.abs(out) + 0.5), 0, 255).astype(np.uint8)


def fsum_mean(vectors) -> np.ndarray:
    """Exact high-precision per-component mean via math.fsum."""
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    n = len(vectors)
    return np.array([math.fsum(v[i] for v in vectors) / n for i in range(len(vectors[0]))])


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def enumerate_windows(width: int, height: int, patch: int, stride: int):
    """Brute-force full-window lattice in row-major order."""
    out = []
    y = 0
    while y + patch <= height:
        x = 0
        while x + patch <= width:
            out.append((x, y))
            x += stride
        y += stride
    return out


def synth_two_stain_image(
    rng: np.random.Generator,
    matrix: np.ndarray,
    side: int = 64,
    io: float = 255.0,
    mag_range: tuple[float, float] = (1.1, 1.55),
    pure_frac: float = 0.12,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward-synthesize an 8-bit two-stain image from a known mixing matrix.

    A fraction of pixels is exactly pure in each stain so robust angle
    percentiles land inside tight pure clusters; magnitudes avoid near-black
    and near-white pixels where 8-bit quantization dominates OD space.
    Returns (rgb uint8 array, concentrations (N, 2)).
    """
    n = side * side
    ratio = rng.uniform(0.02, 0.98, size=n)
    kind = rng.random(n)
    ratio[kind < pure_frac] = 0.0
    ratio[kind > 1.0 - pure_frac] = 1.0
    mag = rng.uniform(*mag_range, size=n)
    conc = np.stack([ratio * mag, (1.0 - ratio) * mag], axis=1)
    od = conc @ matrix.T
    rgb = io * np.power(10.0, -od) - 1.0
    rgb = np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)
    return rgb.reshape(side, side, 3), conc


def random_stain_matrix(rng: np.random.Generator) -> np.ndarray:
    """Random plausible H&E-like matrix, columns unit and blue-ordered.

    Entries are bounded away from zero so pure-stain pixels of a mid-band
    synthetic image clear the OD transparency threshold in every channel.
    """
    base = np.array([[0.2159, 0.8012, 0.5581], [0.5626, 0.7201, 0.4062]])
    while True:
        cols = []
        for b in base:
            v = b + rng.uniform(-0.10, 0.10, size=3)
            v = v / np.linalg.norm(v)
            if v.min() < 0.18:
                break
            cols.append(v)
        if len(cols) < 2:
            continue
        cos = abs(float(cols[0] @ cols[1]))
        if cols[0][2] > cols[1][2] + 0.05 and cos < math.cos(math.radians(15)):
            return np.column_stack(cols)
