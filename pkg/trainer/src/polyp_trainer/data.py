"""Manifest-backed patch dataset.

The trainer talks to the tiling pipeline only through its file protocol:
a JSON-Lines manifest whose records carry patch_id, label, split and the
path of an 8-bit PNG crop (gray or RGB depending on the preprocessing
mode the patches were tiled with).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

CLASS_LABELS = ["HP", "NORM", "TA.HG", "TA.LG", "TVA.HG", "TVA.LG"]
LABEL_TO_INDEX = {label: i for i, label in enumerate(CLASS_LABELS)}

#: ImageNet statistics, matching the pretrained initialization convention
NORM_MEAN = (0.485, 0.456, 0.406)
NORM_STD = (0.229, 0.224, 0.225)


def read_manifest(path: Path | str) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_patch_rgb(path: Path | str) -> Image.Image:
    """Patch PNG as 3-channel PIL image (gray patches are replicated)."""
    with Image.open(path) as im:
        return im.convert("RGB")


def to_tensor(img: Image.Image) -> torch.Tensor:
    arr = np.asarray(img, dtype=np.float32) / 255.0
    t = torch.from_numpy(arr).permute(2, 0, 1)
    mean = torch.tensor(NORM_MEAN).view(3, 1, 1)
    std = torch.tensor(NORM_STD).view(3, 1, 1)
    return (t - mean) / std


class ManifestPatches(Dataset):
    """Patches of one manifest split; unlabeled rows get label -1."""

    def __init__(self, manifest_path, split=None, augment=None):
        self.base_dir = Path(manifest_path).parent
        self.records = [
            r for r in read_manifest(manifest_path) if split is None or r.get("split") == split
        ]
        self.augment = augment

    def __len__(self) -> int:
        return len(self.records)

    def class_counts(self) -> list[int]:
        """RoI-level class counts of this split (for inverse-frequency loss
        weights); falls back to patch counts when RoI ids are absent."""
        rois = {}
        patch_counts = [0] * len(CLASS_LABELS)
        for rec in self.records:
            if not rec.get("label"):
                continue
            idx = LABEL_TO_INDEX[rec["label"]]
            patch_counts[idx] += 1
            if rec.get("roi_id"):
                rois[(rec["slide_id"], rec["roi_id"])] = idx
        if rois:
            counts = [0] * len(CLASS_LABELS)
            for idx in rois.values():
                counts[idx] += 1
            if all(counts):
                return counts
        return [max(1, c) for c in patch_counts]

    def __getitem__(self, i: int):
        rec = self.records[i]
        img = load_patch_rgb(self.base_dir / rec["path"])
        if self.augment is not None:
            img = self.augment(img, i)
        label = LABEL_TO_INDEX[rec["label"]] if rec.get("label") else -1
        return to_tensor(img), label, rec["patch_id"]
