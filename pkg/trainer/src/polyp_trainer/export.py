"""Score manifest patches with a trained checkpoint and emit the scores
CSV protocol: patch_id,hp,norm,ta_hg,ta_lg,tva_hg,tva_lg with rows summing
to 1."""

from __future__ import annotations

import csv
from pathlib import Path

import torch
from torch.utils.data import DataLoader

from .data import ManifestPatches
from .model import load_checkpoint

CSV_HEADER = ["patch_id", "hp", "norm", "ta_hg", "ta_lg", "tva_hg", "tva_lg"]


@torch.no_grad()
def export_scores(
    checkpoint_path: Path | str,
    manifest_path: Path | str,
    out_path: Path | str,
    split: str | None = None,
    batch_size: int = 16,
) -> dict:
    model, _ = load_checkpoint(checkpoint_path)
    dataset = ManifestPatches(manifest_path, split=split)
    loader = DataLoader(dataset, batch_size=batch_size)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with out_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for x, _, patch_ids in loader:
            probs = torch.softmax(model(x), dim=1)
            for pid, p in zip(patch_ids, probs):
                writer.writerow([pid] + [f"{float(v):.8f}" for v in p])
                rows += 1
    return {"scores": str(out_path), "rows": rows}
