"""Deterministic target images used by tests and as the CLI default target."""

from __future__ import annotations

import math

import numpy as np


def reference_image(shape=(3, 8, 8), precision: int = 64) -> np.ndarray:
    """Smooth synthetic picture in [0.05, 0.95]: a disk over two ramps."""
    c, h, w = shape
    yy, xx = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    disk = ((yy - 0.45) ** 2 + (xx - 0.55) ** 2 < 0.09).astype(np.float64)
    planes = []
    for k in range(c):
        phase = k / max(c, 1)
        ramp = 0.5 + 0.5 * np.sin(2 * np.pi * (xx * (1 + k) + yy * 0.5 + phase))
        planes.append(0.6 * ramp + 0.4 * disk * (1 - 2 * (k % 2)) + 0.2 * (k % 2))
    img = np.stack(planes)
    img = (img - img.min()) / (img.max() - img.min())
    return (0.05 + 0.9 * img).astype(np.float64 if precision == 64 else np.float32)


def pooled_undercomplete_model(seed: int = 0, precision: int = 32):
    """``conv 3->6 (3x3, stride 1, pad 1) -> maxpool 2`` on a [3, 8, 8] input.

    Its only embedding has 96 elements against 192 input elements.
    """
    from .layers import Conv2d, MaxPool, Model, initialize

    layers = [Conv2d(np.zeros((6, 3, 3, 3)), np.zeros(6), stride=1, padding=1), MaxPool(2)]
    initialize(layers, seed)
    return Model(layers, (3, 8, 8), precision, [2], seed)


def flat_reference(n: int, precision: int = 64) -> np.ndarray:
    """Reference picture for a flat input of ``n`` elements."""
    side = math.isqrt(n // 3)
    if n % 3 == 0 and side * side == n // 3:
        return reference_image((3, side, side), precision).reshape(-1)
    return reference_image((1, 1, n), precision).reshape(-1)


def default_target(input_shape, precision: int = 64) -> np.ndarray:
    """Reference picture matching a model input shape (image or flat)."""
    shape = tuple(input_shape)
    if len(shape) == 3:
        return reference_image(shape, precision)
    return flat_reference(math.prod(shape), precision).reshape(shape)
