"""Fine-tuning loop: Adam with exponential lr decay, alpha-balanced focal
loss, model selection by validation balanced accuracy."""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader

from .augment import PatchAugment
from .data import CLASS_LABELS, ManifestPatches
from .model import build_resnet18, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    lr_decay: float = 0.99  # exponential, per epoch
    batch_size: int = 16
    epochs: int = 250
    gamma: float = 2.0  # focal focusing exponent
    seed: int = 0
    num_workers: int = 0
    deterministic: bool = True
    pretrained: bool = True
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("learning_rate", "weight_decay", "lr_decay", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def focal_loss(logits: torch.Tensor, targets: torch.Tensor, alpha: torch.Tensor, gamma: float):
    """Mean of -alpha_t (1 - p_t)^gamma log(p_t)."""
    logp = torch.log_softmax(logits, dim=1)
    logp_t = logp.gather(1, targets.unsqueeze(1)).squeeze(1)
    p_t = logp_t.exp()
    return (-alpha[targets] * (1.0 - p_t).pow(gamma) * logp_t).mean()


def balanced_accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    """Mean per-class recall over the classes present."""
    recalls = []
    for cls in np.unique(labels):
        mask = labels == cls
        recalls.append(float((preds[mask] == cls).mean()))
    return float(np.mean(recalls)) if recalls else 0.0


def seed_everything(seed: int, deterministic: bool) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)


@torch.no_grad()
def evaluate_balanced_accuracy(model: nn.Module, loader: DataLoader) -> float:
    model.eval()
    preds, labels = [], []
    for x, y, _ in loader:
        out = model(x)
        preds.append(out.argmax(dim=1).numpy())
        labels.append(y.numpy())
    if not preds:
        return 0.0
    return balanced_accuracy(np.concatenate(preds), np.concatenate(labels))


def train(manifest_path: Path | str, out_dir: Path | str, hp: Hyperparams = Hyperparams()) -> dict:
    """Train on the manifest's train split, select the best epoch by
    validation balanced accuracy, write checkpoint + log CSV.

    Raises ValueError when the manifest is unusable (no train rows, or a
    class entirely absent from training).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(hp.seed, hp.deterministic)

    augment = PatchAugment(hp.seed) if hp.augment else None
    train_ds = ManifestPatches(manifest_path, split="train", augment=augment)
    val_ds = ManifestPatches(manifest_path, split="val")
    if len(train_ds) == 0:
        raise ValueError(f"manifest {manifest_path} has no train rows")
    present = {r["label"] for r in train_ds.records if r.get("label")}
    missing = [c for c in CLASS_LABELS if c not in present]
    if missing:
        raise ValueError(f"classes missing from the train split: {missing}")
    if len(val_ds) == 0:
        log.warning("manifest has no val rows; selecting on training batches instead")
        val_ds = ManifestPatches(manifest_path, split="train")

    counts = torch.tensor(train_ds.class_counts(), dtype=torch.float32)
    alpha = counts.sum() / counts

    generator = torch.Generator().manual_seed(hp.seed)
    train_loader = DataLoader(
        train_ds,
        batch_size=hp.batch_size,
        shuffle=True,
        generator=generator,
        num_workers=hp.num_workers,
    )
    val_loader = DataLoader(val_ds, batch_size=hp.batch_size, num_workers=hp.num_workers)

    model = build_resnet18(pretrained=hp.pretrained)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=hp.learning_rate, weight_decay=hp.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=hp.lr_decay)

    best = {"epoch": -1, "val_balanced_accuracy": -1.0}
    log_rows = []
    checkpoint_path = out_dir / "checkpoint.pt"
    for epoch in range(hp.epochs):
        model.train()
        losses = []
        for x, y, _ in train_loader:
            optimizer.zero_grad()
            loss = focal_loss(model(x), y, alpha, hp.gamma)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        scheduler.step()

        val_bacc = evaluate_balanced_accuracy(model, val_loader)
        mean_loss = float(np.mean(losses))
        log_rows.append({"epoch": epoch, "loss": mean_loss, "val_balanced_accuracy": val_bacc})
        log.info("epoch %d: loss %.4f, val balanced accuracy %.4f", epoch, mean_loss, val_bacc)
        if val_bacc > best["val_balanced_accuracy"]:
            best = {"epoch": epoch, "val_balanced_accuracy": val_bacc}
            save_checkpoint(model, checkpoint_path, extra={"best": best})

    log_path = out_dir / "training_log.csv"
    with log_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "loss", "val_balanced_accuracy"])
        writer.writeheader()
        writer.writerows(log_rows)

    return {
        "checkpoint": str(checkpoint_path),
        "log": str(log_path),
        "best_epoch": best["epoch"],
        "best_val_balanced_accuracy": best["val_balanced_accuracy"],
        "epochs": hp.epochs,
    }
