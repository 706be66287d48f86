"""Masked image error metrics: l1 and PSNR."""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError

PSNR_CAP = 99.0


def metrics(pred, target, mask=None):
    """Masked mean |diff| and PSNR (10*log10(1/MSE), capped at 99 dB).

    pred/target: [C,H,W] in [0,1]; mask: [1,H,W] or [H,W], nonzero where
    the pixel counts.  Raises on an empty mask.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    if mask is None:
        mask = np.ones(pred.shape[-2:], dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 3:
        mask = mask[0]
    sel = mask > 0
    if not sel.any():
        raise DataError("metrics mask is empty")
    diff = pred[:, sel] - target[:, sel]
    l1 = float(np.abs(diff).mean())
    mse = float((diff * diff).mean())
    psnr = PSNR_CAP if mse < 1e-10 else min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))
    return {"l1": l1, "psnr": float(psnr)}
