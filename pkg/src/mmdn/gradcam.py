"""Gradient class activation maps for the classifier models.

The map for class c at a chosen layer is ReLU(sum_k alpha_k * A_k) with
alpha_k the spatial mean of d logit_c / d A_k, bilinearly upsampled to the
input resolution and normalized to a maximum of 1 (or left all zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Node


@dataclass
class CamMap:
    values: np.ndarray        # (H, W), >= 0, max is 1 or all zeros
    source_layer: str
    target_class: int


def gradcam(model, x_a: np.ndarray, x_b: np.ndarray | None = None,
            target_class: int = 0, target_layer: str | None = None) -> CamMap:
    """CAM for one sample; inputs are (C,S,S) arrays in [0,1]."""
    layer = target_layer or _default_layer(model)
    if layer not in model.capture_points():
        raise ValueError(
            f"unknown layer {layer!r}; available: {model.capture_points()}")

    dtype = model.registry.dtype
    args = [engine.constant(x_a[None].astype(dtype, copy=False))]
    if model.multimodal:
        if x_b is None:
            raise ValueError("multimodal model needs both modalities")
        args.append(engine.constant(x_b[None].astype(dtype, copy=False)))
    else:
        args.append(None)

    logits = model.forward(args[0], args[1], mode="eval", capture=layer)
    acts: Node = model.captured
    if acts is None or acts.value.ndim != 4:
        raise ValueError(f"layer {layer!r} did not produce a 4-d activation")
    n_classes = logits.value.shape[1]
    if not 0 <= target_class < n_classes:
        raise ValueError(f"target class {target_class} outside [0, {n_classes})")

    onehot = np.zeros_like(logits.value)
    onehot[0, target_class] = 1.0
    engine.backward(engine.sum_all(engine.mul(logits, engine.constant(onehot))))

    grad = acts.grad
    if grad is None:
        cam_small = np.zeros(acts.value.shape[2:], dtype=np.float64)
    else:
        alpha = grad[0].mean(axis=(1, 2))                     # (C,)
        cam_small = np.maximum((alpha[:, None, None] * acts.value[0]).sum(axis=0), 0.0)

    cam = bilinear_upsample(cam_small.astype(np.float64), x_a.shape[1], x_a.shape[2])
    peak = cam.max()
    if peak > 0:
        cam /= peak
    return CamMap(cam, layer, target_class)


def _default_layer(model) -> str:
    points = model.capture_points()
    for name in reversed(points):
        if name.startswith("block") or name.startswith("stage"):
            return name
    return points[-1]


def bilinear_upsample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-aligned bilinear resize of a 2-d map."""
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def overlay(cam: CamMap, image: np.ndarray) -> np.ndarray:
    """Blend a red-heat rendering of the CAM onto the grayscale input.

    Per pixel the blend weight is 0.5 * cam, so a zero map leaves the
    grayscale image untouched and a saturated pixel is half heat, half gray.
    Returns a (3, H, W) image in [0, 1].
    """
    if image.ndim != 3:
        raise ValueError(f"expected (C,H,W) image, got {image.shape}")
    v = cam.values
    if v.shape != image.shape[1:]:
        raise ValueError(f"CAM {v.shape} does not match image {image.shape[1:]}")
    gray = image.mean(axis=0)
    heat = np.stack([np.ones_like(v), np.zeros_like(v), np.zeros_like(v)])
    base = np.stack([gray] * 3)
    alpha = 0.5 * v[None]
    return np.clip((1 - alpha) * base + alpha * heat, 0.0, 1.0)


def quadrant_mass(cam: CamMap, bounds: tuple[int, int, int, int]) -> float:
    """Fraction of CAM mass inside (r0, r1, c0, c1); 0 for an empty map."""
    total = cam.values.sum()
    if total <= 0:
        return 0.0
    r0, r1, c0, c1 = bounds
    return float(cam.values[r0:r1, c0:c1].sum() / total)
