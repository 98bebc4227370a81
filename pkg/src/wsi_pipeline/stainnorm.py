"""Macenko stain normalization.

Stains mix linearly in optical density space (Beer-Lambert), so the two
dominant stain directions of an H&E image are recovered by projecting
tissue OD samples onto the plane of the two leading covariance
eigenvectors and taking robust angle percentiles as the extreme
directions. Concentrations are then rescaled onto a reference profile.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DegenerateStains, InsufficientTissue
from .raster import ImageBuffer, quantize_u8

MIN_TISSUE_PIXELS = 100
MIN_STAIN_ANGLE_DEG = 1.0


@dataclass(frozen=True)
class MacenkoParams:
    io: float = 255.0  # transmitted light intensity
    beta: float = 0.15  # OD transparency threshold
    alpha: float = 1.0  # robust angle percentile
    conc_percentile: float = 99.0

    def __post_init__(self):
        if self.io <= 0:
            raise ValueError(f"io must be positive, got {self.io}")
        if not 0 < self.beta < 2:
            raise ValueError(f"beta must be in (0, 2), got {self.beta}")
        if not 0 < self.alpha < 50:
            raise ValueError(f"alpha must be in (0, 50), got {self.alpha}")
        if not 50 <= self.conc_percentile <= 100:
            raise ValueError(f"conc_percentile must be in [50, 100], got {self.conc_percentile}")


@dataclass(frozen=True)
class StainProfile:
    """3x2 unit-column stain matrix (OD space) plus per-stain robust maxima.

    Columns are ordered by descending blue-channel OD component; the first
    column is taken as hematoxylin under this convention.
    """

    stain_matrix: np.ndarray
    max_concentrations: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.stain_matrix, dtype=np.float64)
        c = np.asarray(self.max_concentrations, dtype=np.float64)
        if m.shape != (3, 2):
            raise ValueError(f"stain_matrix must be 3x2, got {m.shape}")
        if c.shape != (2,):
            raise ValueError(f"max_concentrations must have 2 entries, got {c.shape}")
        norms = np.linalg.norm(m, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError(f"stain columns must be unit norm, got norms {norms}")
        if np.any(m < -1e-9):
            raise ValueError("stain matrix entries must be non-negative")
        if np.any(c <= 0):
            raise ValueError(f"max concentrations must be positive, got {c}")
        cos_angle = float(np.clip(m[:, 0] @ m[:, 1], -1.0, 1.0))
        if math.degrees(math.acos(cos_angle)) <= MIN_STAIN_ANGLE_DEG:
            raise DegenerateStains("stain directions are collinear")
        m = m.copy()
        c = c.copy()
        m.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "stain_matrix", m)
        object.__setattr__(self, "max_concentrations", c)


def rgb_to_od(img: ImageBuffer, io: float = 255.0) -> np.ndarray:
    """Per-sample optical density, OD = -log10((I + 1) / io). Shape (h, w, 3)."""
    img.require_channels(3)
    return -np.log10((img.data.astype(np.float64) + 1.0) / io)


def od_to_rgb(od: np.ndarray, io: float = 255.0) -> ImageBuffer:
    """Inverse of rgb_to_od: I = io * 10^(-OD) - 1, quantized to 8 bits."""
    return ImageBuffer(quantize_u8(io * np.power(10.0, -np.asarray(od, dtype=np.float64)) - 1.0))


def jacobi_eigh3(a: np.ndarray, max_sweeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue,
    eigenvectors in columns.
    """
    a = np.array(a, dtype=np.float64)
    v = np.eye(3)
    for _ in range(max_sweeps):
        off = math.sqrt(a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2)
        if off < 1e-15 * max(1.0, np.abs(np.diag(a)).max()):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            if a[p, q] == 0.0:
                continue
            tau = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
            t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
            c = 1.0 / math.sqrt(1.0 + t * t)
            s = t * c
            rot = np.eye(3)
            rot[p, p] = rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            v = v @ rot
    order = np.argsort(np.diag(a))[::-1]
    return np.diag(a)[order], v[:, order]


def _nnls_2stain(stain_matrix: np.ndarray, od_flat: np.ndarray) -> np.ndarray:
    """Exact non-negative least squares for the per-pixel 2-unknown system.

    Solves min ||M c - od||, c >= 0 for every row of od_flat (N, 3). With two
    unknowns the active-set solution is: take the unconstrained solution if
    it is feasible, otherwise the best of the two single-stain projections.
    """
    m = stain_matrix
    gram = m.T @ m
    rhs = od_flat @ m  # (N, 2)
    c = np.linalg.solve(gram, rhs.T).T
    bad = np.any(c < 0, axis=1)
    if np.any(bad):
        # unit columns: projection coefficient is just od . m_i, clamped at 0;
        # larger coefficient means smaller residual
        proj = np.clip(rhs[bad], 0.0, None)
        pick = np.argmax(proj, axis=1)
        single = np.zeros_like(proj)
        single[np.arange(len(pick)), pick] = proj[np.arange(len(pick)), pick]
        c[bad] = single
    return c


def estimate_stain_profile(img: ImageBuffer, params: MacenkoParams = MacenkoParams()) -> StainProfile:
    """Estimate the two stain directions and robust concentration maxima.

    Raises InsufficientTissue when fewer than 100 pixels exceed the OD
    transparency threshold in every channel, and DegenerateStains when the
    recovered directions are collinear (e.g. grayscale input).
    """
    od = rgb_to_od(img, params.io).reshape(-1, 3)
    tissue = od[np.all(od > params.beta, axis=1)]
    if tissue.shape[0] < MIN_TISSUE_PIXELS:
        raise InsufficientTissue(tissue.shape[0], MIN_TISSUE_PIXELS)

    centered = tissue - tissue.mean(axis=0)
    cov = centered.T @ centered / max(1, tissue.shape[0] - 1)
    eigvals, eigvecs = jacobi_eigh3(cov)
    if eigvals[1] <= 1e-12 * max(eigvals[0], 1e-300):
        raise DegenerateStains("OD covariance has rank < 2")
    plane = eigvecs[:, :2]  # (3, 2), leading eigenvectors

    proj = tissue @ plane
    angles = np.arctan2(proj[:, 1], proj[:, 0])
    lo = np.percentile(angles, params.alpha)
    hi = np.percentile(angles, 100.0 - params.alpha)

    cols = []
    for phi in (lo, hi):
        v = plane @ np.array([math.cos(phi), math.sin(phi)])
        if v.sum() < 0:
            v = -v
        v = np.clip(v, 0.0, None)
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            raise DegenerateStains("stain direction collapsed to zero")
        cols.append(v / norm)
    # hematoxylin first: larger blue-channel OD component
    if cols[0][2] < cols[1][2]:
        cols = [cols[1], cols[0]]
    matrix = np.column_stack(cols)

    cos_angle = float(np.clip(matrix[:, 0] @ matrix[:, 1], -1.0, 1.0))
    if math.degrees(math.acos(cos_angle)) <= MIN_STAIN_ANGLE_DEG:
        raise DegenerateStains("stain directions are collinear")

    conc = _nnls_2stain(matrix, od)
    max_conc = np.percentile(conc, params.conc_percentile, axis=0)
    if np.any(max_conc <= 0):
        raise DegenerateStains("a stain has no positive concentration mass")
    return StainProfile(stain_matrix=matrix, max_concentrations=max_conc)


def normalize(
    img: ImageBuffer,
    source: StainProfile,
    reference: StainProfile,
    params: MacenkoParams = MacenkoParams(),
) -> ImageBuffer:
    """Remap the image's stain appearance onto the reference profile."""
    od = rgb_to_od(img, params.io)
    shape = od.shape
    conc = _nnls_2stain(source.stain_matrix, od.reshape(-1, 3))
    conc *= reference.max_concentrations / source.max_concentrations
    od_new = (conc @ reference.stain_matrix.T).reshape(shape)
    return od_to_rgb(od_new, params.io)


# ---------------------------------------------------------------------------
# Profile persistence: 6 matrix entries column-major + 2 max concentrations


def profile_to_json(profile: StainProfile) -> str:
    obj = {
        "stain_matrix_colmajor": [float(x) for x in profile.stain_matrix.flatten(order="F")],
        "max_concentrations": [float(x) for x in profile.max_concentrations],
    }
    return json.dumps(obj, indent=2) + "\n"


def profile_from_json(text: str) -> StainProfile:
    obj = json.loads(text)
    matrix = np.array(obj["stain_matrix_colmajor"], dtype=np.float64).reshape((3, 2), order="F")
    return StainProfile(
        stain_matrix=matrix,
        max_concentrations=np.array(obj["max_concentrations"], dtype=np.float64),
    )


def save_profile(profile: StainProfile, path: Path | str) -> None:
    Path(path).write_text(profile_to_json(profile), encoding="utf-8")


def load_profile(path: Path | str) -> StainProfile:
    return profile_from_json(Path(path).read_text(encoding="utf-8"))


def default_reference_profile() -> StainProfile:
    """Reference profile shipped with the package, for reproducible runs."""
    text = resources.files("wsi_pipeline").joinpath("data/reference_stain.json").read_text("utf-8")
    return profile_from_json(text)
