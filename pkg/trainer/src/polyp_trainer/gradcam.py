"""Grad-CAM heatmaps over the last convolutional block."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import load_patch_rgb, to_tensor
from .model import load_checkpoint


def gradcam_heatmap(model: torch.nn.Module, image_tensor: torch.Tensor, target_class=None):
    """Class-activation map in [0, 1] at the input resolution.

    Gradients of the target logit are averaged over layer4's spatial map to
    weight its channels; a flat map (constant input) normalizes to zeros.
    """
    activations = {}
    gradients = {}

    def fwd_hook(_module, _inp, out):
        activations["value"] = out
        out.register_hook(lambda grad: gradients.__setitem__("value", grad))

    handle = model.layer4.register_forward_hook(fwd_hook)
    try:
        model.eval()
        x = image_tensor.unsqueeze(0).requires_grad_(True)
        logits = model(x)
        cls = int(logits.argmax(dim=1)) if target_class is None else int(target_class)
        model.zero_grad()
        logits[0, cls].backward()
    finally:
        handle.remove()

    acts = activations["value"][0]
    grads = gradients["value"][0]
    weights = grads.mean(dim=(1, 2))
    cam = torch.relu((weights[:, None, None] * acts).sum(dim=0)).detach().numpy()

    h, w = image_tensor.shape[1:]
    cam_img = Image.fromarray(cam.astype(np.float32), mode="F").resize((w, h), Image.BILINEAR)
    cam = np.asarray(cam_img, dtype=np.float64)
    span = cam.max() - cam.min()
    if span < 1e-12:
        return np.zeros_like(cam), cls
    return (cam - cam.min()) / span, cls


def render_gradcam(
    checkpoint_path: Path | str,
    patch_path: Path | str,
    out_path: Path | str,
    target_class=None,
) -> dict:
    """Write a red-channel heatmap blend over the patch PNG."""
    model, _ = load_checkpoint(checkpoint_path)
    img = load_patch_rgb(patch_path)
    heatmap, cls = gradcam_heatmap(model, to_tensor(img), target_class)

    base = np.asarray(img, dtype=np.float64)
    blend = 0.55 * base + 0.45 * np.stack(
        [255.0 * heatmap, np.zeros_like(heatmap), 255.0 * (1 - heatmap)], axis=2
    )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.clip(blend, 0, 255).astype(np.uint8), mode="RGB").save(out_path)
    return {
        "overlay": str(out_path),
        "predicted_class": cls,
        "heatmap_min": float(heatmap.min()),
        "heatmap_max": float(heatmap.max()),
        "heatmap_shape": list(heatmap.shape),
    }
