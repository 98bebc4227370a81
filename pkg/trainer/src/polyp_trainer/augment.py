"""Training-time augmentation: independent flips plus one op drawn from
{rotation, equalization, solarization, inversion, contrast}, deterministic
per (seed, sample index)."""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image
from torchvision.transforms import functional as TF

OPS = ("rotation", "equalization", "solarization", "inversion", "contrast")


def _rng_for(seed: int, index: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


class PatchAugment:
    def __init__(
        self,
        seed: int,
        p_hflip: float = 0.5,
        p_vflip: float = 0.5,
        solarize_threshold: int = 128,
        contrast_range: tuple[float, float] = (0.5, 1.5),
    ):
        self.seed = seed
        self.p_hflip = p_hflip
        self.p_vflip = p_vflip
        self.solarize_threshold = solarize_threshold
        self.contrast_range = contrast_range

    def __call__(self, img: Image.Image, index: int) -> Image.Image:
        rng = _rng_for(self.seed, index)
        if rng.random() < self.p_hflip:
            img = TF.hflip(img)
        if rng.random() < self.p_vflip:
            img = TF.vflip(img)
        op = OPS[int(rng.integers(len(OPS)))]
        if op == "rotation":
            img = TF.rotate(img, int(rng.choice([90, 180, 270])), expand=False)
        elif op == "equalization":
            img = TF.equalize(img)
        elif op == "solarization":
            img = TF.solarize(img, self.solarize_threshold)
        elif op == "inversion":
            img = TF.invert(img)
        elif op == "contrast":
            img = TF.adjust_contrast(img, float(rng.uniform(*self.contrast_range)))
        return img
