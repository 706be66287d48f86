"""PNG image and mask I/O.

Images are exchanged as float32 [C,H,W] in [0,1]; 8-bit files are scaled
by 1/255 with no gamma handling (inputs are assumed tone-mapped).  Masks
are binary [1,H,W] where 1 marks static scene content.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from ..errors import DataError


def load_image(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as e:
        raise DataError(f"cannot decode image {path}: {e}") from e
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(path, image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (3, 4):
        raise DataError(f"expected [3|4,H,W] image, got {image.shape}")
    arr = np.clip(image, 0.0, 1.0).transpose(1, 2, 0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    mode = "RGBA" if image.shape[0] == 4 else "RGB"
    Image.fromarray(data, mode=mode).save(path)


def load_mask(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot decode mask {path}: {e}") from e
    return np.ascontiguousarray((arr >= 128).astype(np.float32)[None])


def save_mask(path, mask):
    mask = np.asarray(mask)
    if mask.ndim == 3:
        mask = mask[0]
    Image.fromarray((np.clip(mask, 0, 1) * 255).astype(np.uint8), mode="L").save(path)


def resize_bilinear(image, width, height):
    """Bilinear resample of a [C,H,W] float image (no gradients)."""
    c, h, w = image.shape
    if (w, h) == (width, height):
        return np.ascontiguousarray(image.astype(np.float32))
    xs = (np.arange(width) + 0.5) * (w / width) - 0.5
    ys = (np.arange(height) + 0.5) * (h / height) - 0.5
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2) if w > 1 else np.zeros(width, int)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2) if h > 1 else np.zeros(height, int)
    fx = (xs - x0)[None, None, :]
    fy = (ys - y0)[None, :, None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    i = image.astype(np.float32)
    top = i[:, y0][:, :, x0] * (1 - fx) + i[:, y0][:, :, x1] * fx
    bot = i[:, y1][:, :, x0] * (1 - fx) + i[:, y1][:, :, x1] * fx
    return np.ascontiguousarray(top * (1 - fy) + bot * fy)
