"""Appearance-matching style loss on RGB image pyramids.

Stands in for pretrained-feature Gram losses: Gram matrices are built
from raw RGB at pyramid levels 0..2 instead of deep features.  The Gram
structure (channel co-occurrence, spatially pooled) is what transfers.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, avg_downsample2, matmul, reshape, sum_, transpose2d

STYLE_LEVELS = 3


def gram(image):
    """Channel Gram matrix (1/HW) * X @ X^T of an image [C,H,W]."""
    if not isinstance(image, Tensor):
        image = Tensor(np.asarray(image, dtype=np.float32))
    c, h, w = image.shape
    x = reshape(image, (c, h * w))
    return matmul(x, transpose2d(x)) * (1.0 / (h * w))


def style_loss(pred, target, levels=STYLE_LEVELS):
    """Sum over pyramid levels of |gram(pred) - gram(target)|_1 / C^2."""
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(pred, dtype=np.float32))
    target = Tensor(np.asarray(target.data if isinstance(target, Tensor) else target,
                               dtype=np.float32))
    c = pred.shape[0]
    total = None
    p, t = pred, target
    for level in range(levels):
        if level > 0:
            if p.shape[-1] < 2 or p.shape[-2] < 2:
                break
            p = avg_downsample2(p)
            t = avg_downsample2(t)
        term = sum_((gram(p) - gram(t)).abs()) * (1.0 / (c * c))
        total = term if total is None else total + term
    return total
