"""Patch scoring: the scorer contract, a handcrafted-feature baseline
trained with alpha-balanced focal loss, and the external-scores bridge.

The baseline (16-bin histograms + intensity and gradient statistics into a
multinomial linear model) exists so the whole pipeline runs and is testable
without any neural runtime; CNN scorers plug in through the scores-CSV
protocol instead.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .annotations import TissueClass6
from .errors import (
    MalformedRow,
    MissingClass,
    MissingPatch,
    NonFiniteInput,
    SumNotOne,
    ZeroCount,
)
from .raster import LUMA_WEIGHTS, ImageBuffer
from .tiler import Patch

log = logging.getLogger(__name__)

N_CLASSES = len(TissueClass6)
HIST_BINS = 16
PROB_FLOOR = 1e-12

SCORES_CSV_HEADER = ["patch_id", "hp", "norm", "ta_hg", "ta_lg", "tva_hg", "tva_lg"]


@dataclass(frozen=True)
class ClassScores:
    """Per-patch probability vector over the six tissue classes."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (N_CLASSES,):
            raise ValueError(f"expected {N_CLASSES} probabilities, got shape {p.shape}")
        if np.any(p < -1e-9) or np.any(p > 1 + 1e-9):
            raise ValueError(f"probabilities out of [0, 1]: {p}")
        if abs(p.sum() - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {p.sum()}, expected 1 within 1e-6")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    def as_array(self) -> np.ndarray:
        return np.array(self.probs, dtype=np.float64)

    def __getitem__(self, cls: TissueClass6) -> float:
        return self.probs[int(cls)]


class PatchScorer(Protocol):
    """Scoring contract: deterministic for fixed model state, carrying
    identity metadata for run records."""

    name: str
    phi_um: float | None
    mode: str | None

    def score(self, patch: Patch) -> ClassScores: ...


def softmax(logits: Sequence[float]) -> ClassScores:
    """Exp-normalized scores with max-subtraction for overflow safety."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput(f"non-finite logits: {z}")
    e = np.exp(z - z.max())
    return ClassScores(tuple(e / e.sum()))


def class_weights(roi_counts: Sequence[int]) -> np.ndarray:
    """Inverse-frequency weights alpha_t = (sum_i R_i) / R_t."""
    r = np.asarray(roi_counts, dtype=np.float64)
    if r.shape != (N_CLASSES,):
        raise ValueError(f"expected {N_CLASSES} counts, got shape {r.shape}")
    if np.any(r <= 0):
        raise ZeroCount(f"all class counts must be positive, got {r}")
    return r.sum() / r


@dataclass(frozen=True)
class FocalLossConfig:
    gamma: float = 2.0
    alpha: tuple[float, ...] = (1.0,) * N_CLASSES

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.shape != (N_CLASSES,):
            raise ValueError(f"alpha must have {N_CLASSES} entries")
        if np.any(a <= 0):
            raise ValueError(f"alpha must be positive elementwise, got {a}")
        object.__setattr__(self, "alpha", tuple(float(x) for x in a))


def focal_loss(scores: ClassScores, truth: TissueClass6, cfg: FocalLossConfig) -> float:
    """L = -alpha_t * (1 - p_t)^gamma * ln(p_t), with p_t floored at 1e-12."""
    p = max(scores[truth], PROB_FLOOR)
    return float(-cfg.alpha[int(truth)] * (1.0 - p) ** cfg.gamma * np.log(p))


# ---------------------------------------------------------------------------
# Handcrafted features


def intensity_plane(img: ImageBuffer) -> np.ndarray:
    """Float intensity in [0, 1]: Luma for RGB, the channel itself for gray."""
    data = img.data.astype(np.float64) / 255.0
    if img.channels == 1:
        return data[:, :, 0]
    return data @ np.array(LUMA_WEIGHTS)


def extract_features(patch: Patch) -> np.ndarray:
    """Per-channel 16-bin normalized histogram, intensity mean/std, and
    finite-difference gradient magnitude mean/std. Length 16*C + 4."""
    img = patch.pixels
    n = img.height * img.width
    parts = []
    for c in range(img.channels):
        hist = np.bincount(img.data[:, :, c].ravel() >> 4, minlength=HIST_BINS)
        parts.append(hist.astype(np.float64) / n)
    plane = intensity_plane(img)
    gy, gx = np.gradient(plane)
    grad = np.hypot(gx, gy)
    parts.append(np.array([plane.mean(), plane.std(), grad.mean(), grad.std()]))
    return np.concatenate(parts)


def feature_dim(channels: int) -> int:
    return HIST_BINS * channels + 4


# ---------------------------------------------------------------------------
# Baseline multinomial linear model


@dataclass
class BaselineModel:
    weights: np.ndarray  # (6, F)
    bias: np.ndarray  # (6,)
    channels: int
    hist_bins: int = HIST_BINS
    training_log: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("model parameters must be finite")

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights.T + self.bias

    def score_features(self, features: np.ndarray) -> ClassScores:
        return softmax(self.logits(features))

    def save(self, path: Path | str) -> None:
        obj = {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "channels": self.channels,
            "hist_bins": self.hist_bins,
        }
        Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: Path | str) -> "BaselineModel":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return BaselineModel(
            weights=np.array(obj["weights"], dtype=np.float64),
            bias=np.array(obj["bias"], dtype=np.float64),
            channels=int(obj["channels"]),
            hist_bins=int(obj["hist_bins"]),
        )


def focal_objective(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    cfg: FocalLossConfig,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean focal loss over softmax(W f + b) and its analytic gradient.

    d/dz of -alpha (1-p_t)^g ln p_t is
    alpha (1-p_t)^(g-1) (g p_t ln p_t - (1-p_t)) * (onehot - p);
    gamma = 0 reduces to the cross-entropy gradient alpha (p - onehot).
    """
    n = features.shape[0]
    z = features @ weights.T + bias
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    idx = np.arange(n)
    pt = np.clip(p[idx, labels], PROB_FLOOR, 1.0)
    alpha = np.asarray(cfg.alpha)[labels]
    g = cfg.gamma

    loss = float(np.mean(-alpha * (1.0 - pt) ** g * np.log(pt)))

    if g == 0:
        factor = -alpha
    else:
        one_m = 1.0 - pt
        safe = one_m > 1e-15
        factor = np.zeros(n)
        factor[safe] = (
            alpha[safe]
            * one_m[safe] ** (g - 1.0)
            * (g * pt[safe] * np.log(pt[safe]) - one_m[safe])
        )
    onehot = np.zeros_like(p)
    onehot[idx, labels] = 1.0
    dz = factor[:, None] * (onehot - p) / n  # (n, 6)
    grad_w = dz.T @ features
    grad_b = dz.sum(axis=0)
    return loss, grad_w, grad_b


def train_baseline(
    patches: Sequence[Patch],
    cfg: FocalLossConfig = FocalLossConfig(),
    step_size: float = 1.0,
    epochs: int = 400,
    seed: int = 0,
) -> BaselineModel:
    """Full-batch gradient descent from a zero-initialized model.

    Deterministic given the seed (kept for API stability; the full-batch
    path draws nothing). Raises MissingClass unless every tissue class has
    at least one labeled patch.
    """
    labeled = [p for p in patches if p.label is not None]
    if not labeled:
        raise MissingClass("no labeled patches")
    present = {int(p.label) for p in labeled}
    missing = [t.label for t in TissueClass6 if int(t) not in present]
    if missing:
        raise MissingClass(f"classes without samples: {missing}")

    channels = labeled[0].pixels.channels
    features = np.stack([extract_features(p) for p in labeled])
    labels = np.array([int(p.label) for p in labeled])

    weights = np.zeros((N_CLASSES, features.shape[1]))
    bias = np.zeros(N_CLASSES)
    model = BaselineModel(weights=weights, bias=bias, channels=channels)
    for epoch in range(epochs):
        loss, grad_w, grad_b = focal_objective(weights, bias, features, labels, cfg)
        model.training_log.append(loss)
        weights -= step_size * grad_w
        bias -= step_size * grad_b
    if epochs > 0:
        final_loss, _, _ = focal_objective(weights, bias, features, labels, cfg)
        model.training_log.append(final_loss)
        if final_loss > model.training_log[0]:
            log.warning(
                "training ended above the initial loss (%.6f > %.6f); reduce step size",
                final_loss,
                model.training_log[0],
            )
    return model


# ---------------------------------------------------------------------------
# Scorers


class BaselineScorer:
    def __init__(self, model: BaselineModel, name: str = "baseline",
                 phi_um: float | None = None, mode: str | None = None):
        self.model = model
        self.name = name
        self.phi_um = phi_um
        self.mode = mode

    def score(self, patch: Patch) -> ClassScores:
        return self.model.score_features(extract_features(patch))


class OracleScorer:
    """One-hot score on the patch's label, falling back to its slide's
    ground-truth class; uniform when neither is known.

    Test instrument: feeding ground truth through the scoring path must
    produce perfect slide metrics.
    """

    name = "oracle"

    def __init__(self, truth_by_slide: dict[str, TissueClass6] | None = None,
                 phi_um: float | None = None, mode: str | None = None):
        self.truth_by_slide = truth_by_slide or {}
        self.phi_um = phi_um
        self.mode = mode

    def score(self, patch: Patch) -> ClassScores:
        label = patch.label
        if label is None:
            label = self.truth_by_slide.get(patch.slide_id)
        if label is None:
            return ClassScores((1.0 / N_CLASSES,) * N_CLASSES)
        probs = [0.0] * N_CLASSES
        probs[int(label)] = 1.0
        return ClassScores(tuple(probs))


class ExternalScores:
    """Scores preloaded from a CSV, keyed by patch_id."""

    def __init__(self, table: dict[str, ClassScores], name: str = "external",
                 phi_um: float | None = None, mode: str | None = None):
        self.table = table
        self.name = name
        self.phi_um = phi_um
        self.mode = mode

    def score(self, patch: Patch) -> ClassScores:
        try:
            return self.table[patch.patch_id]
        except KeyError:
            raise MissingPatch(patch.patch_id) from None


# ---------------------------------------------------------------------------
# External scores protocol (CSV)


def write_scores_csv(rows: Iterable[tuple[str, Sequence[float]]], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_CSV_HEADER)
        for patch_id, probs in rows:
            writer.writerow([patch_id] + [f"{p:.8f}" for p in probs])


def external_scores_load(path: Path | str, manifest: Sequence[dict]) -> dict[str, ClassScores]:
    """Load and validate a scores CSV against a patch manifest.

    Every manifest patch must have exactly one row; rows must sum to 1
    within 1e-4 and are renormalized. Rows for unknown patch ids are
    ignored so a superset file can serve several manifests.
    """
    table: dict[str, ClassScores] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCORES_CSV_HEADER:
            raise MalformedRow(1, f"bad header {header!r}, expected {SCORES_CSV_HEADER!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise MalformedRow(line_no, f"expected 7 fields, got {len(row)}")
            patch_id = row[0]
            try:
                probs = np.array([float(x) for x in row[1:]], dtype=np.float64)
            except ValueError:
                raise MalformedRow(line_no, f"non-numeric probability in {row[1:]}") from None
            if np.any(probs < 0) or not np.all(np.isfinite(probs)):
                raise MalformedRow(line_no, f"probabilities must be finite and >= 0: {row[1:]}")
            total = probs.sum()
            if abs(total - 1.0) > 1e-4:
                raise SumNotOne(line_no, total)
            if patch_id in table:
                raise MalformedRow(line_no, f"duplicate row for patch {patch_id!r}")
            table[patch_id] = ClassScores(tuple(probs / total))
    for rec in manifest:
        if rec["patch_id"] not in table:
            raise MissingPatch(rec["patch_id"])
    return {rec["patch_id"]: table[rec["patch_id"]] for rec in manifest}
