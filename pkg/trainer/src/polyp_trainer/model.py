"""ResNet-18 patch classifier: ImageNet initialization when the weights are
reachable, with a clean fallback to random initialization otherwise."""

from __future__ import annotations

import logging

import torch
from torch import nn
from torchvision import models

log = logging.getLogger(__name__)

N_CLASSES = 6


def build_resnet18(pretrained: bool = True) -> nn.Module:
    weights = None
    if pretrained:
        try:
            weights = models.ResNet18_Weights.IMAGENET1K_V1
            model = models.resnet18(weights=weights)
        except Exception as exc:  # hub unreachable: fall back, keep training usable
            log.warning("pretrained weights unavailable (%s); using random init", exc)
            model = models.resnet18(weights=None)
    else:
        model = models.resnet18(weights=None)
    model.fc = nn.Linear(model.fc.in_features, N_CLASSES)
    return model


def save_checkpoint(model: nn.Module, path, extra: dict | None = None) -> None:
    payload = {"state_dict": model.state_dict()}
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[nn.Module, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = models.resnet18(weights=None)
    model.fc = nn.Linear(model.fc.in_features, N_CLASSES)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    meta = {k: v for k, v in payload.items() if k != "state_dict"}
    return model, meta
