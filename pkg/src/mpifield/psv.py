"""Plane-sweep volumes: posed photos reprojected into the reference frustum.

A PSV holds, for every depth plane, the photo resampled as if its
content lived on that plane.  Transient masks gate both the sampling
validity and any later aggregation, so masked pixels never contribute.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import geometry
from .autodiff import Tensor
from .autodiff.kernels import bilinear_gather, fill_grid
from .errors import DataError, GeometryError, ShapeError
from .mpi import composite

log = logging.getLogger(__name__)

UNOBSERVED_FILL = 0.5  # neutral gray for voxels no photo ever saw


@dataclass
class PlaneSweepVolume:
    ref_cam: geometry.CameraView
    planes: geometry.PlaneStack
    color: np.ndarray       # [D,3,H,W]
    validity: np.ndarray    # [D,1,H,W] in [0,1]

    @property
    def depth_count(self):
        return self.planes.count


def build_psv(image, mask, cam, ref_cam, planes):
    """Reproject one posed photo into the reference frustum per depth plane.

    image [3,h,w] and mask [1,h,w] live in `cam`; the volume is sampled
    on the reference pixel lattice.  validity = bilinear sampling
    validity x warped mask.
    """
    image = np.ascontiguousarray(image, dtype=np.float32)
    if mask is None:
        mask = np.ones((1,) + image.shape[1:], dtype=np.float32)
    mask = np.ascontiguousarray(mask, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"image must be [3,h,w], got {image.shape}")
    if mask.shape != (1,) + image.shape[1:]:
        raise ShapeError(f"mask must be [1,h,w] matching image, got {mask.shape}")
    if (image.shape[2], image.shape[1]) != (cam.intrinsics.width, cam.intrinsics.height):
        raise ShapeError("image dims do not match camera intrinsics")

    D = planes.count
    H, W = ref_cam.intrinsics.height, ref_cam.intrinsics.width
    stacked = np.concatenate([image, mask], axis=0)
    color = np.empty((D, 3, H * W), dtype=np.float32)
    validity = np.empty((D, 1, H * W), dtype=np.float32)
    xs = np.empty(H * W, dtype=np.float32)
    ys = np.empty(H * W, dtype=np.float32)
    sample = np.empty((4, H * W), dtype=np.float32)
    valid = np.empty(H * W, dtype=np.float32)
    degenerate = 0
    for d, depth in enumerate(planes.depths):
        try:
            # ref pixel -> photo pixel for content on plane z_ref = depth
            h9 = geometry.plane_homography_forward(ref_cam, cam, depth).astype(np.float32).reshape(9)
        except GeometryError:
            color[d] = UNOBSERVED_FILL
            validity[d] = 0.0
            degenerate += 1
            continue
        fill_grid(np.ascontiguousarray(h9), 0, 0, H, W, xs, ys)
        bilinear_gather(stacked, xs, ys, sample, valid)
        v = valid * sample[3]
        color[d] = sample[:3]
        validity[d, 0] = v
    if degenerate == D:
        log.warning("camera is degenerate for every plane; PSV is empty")
    return PlaneSweepVolume(ref_cam, planes,
                            np.ascontiguousarray(color.reshape(D, 3, H, W)),
                            np.ascontiguousarray(validity.reshape(D, 1, H, W)))


class MeanAccumulator:
    """Streaming validity-weighted mean over PSVs, in float64."""

    def __init__(self, planes, height, width):
        self.planes = planes
        self.wsum = np.zeros((planes.count, 1, height, width), dtype=np.float64)
        self.csum = np.zeros((planes.count, 3, height, width), dtype=np.float64)
        self.count = 0

    def add(self, psv):
        if psv.color.shape != self.csum.shape:
            raise ShapeError(f"PSV shape {psv.color.shape} does not match accumulator")
        self.wsum += psv.validity
        self.csum += psv.validity * psv.color
        self.count += 1

    def mean(self, fill=UNOBSERVED_FILL):
        """(color [D,3,H,W], validity [D,1,H,W]); unobserved voxels get `fill`."""
        observed = np.broadcast_to(self.wsum > 0, self.csum.shape)
        mean = self.csum / np.maximum(self.wsum, 1e-12)
        color = np.full(self.csum.shape, fill, dtype=np.float32)
        color[observed] = mean[observed].astype(np.float32)
        return color, (self.wsum > 0).astype(np.float32)


def mean_psv(photos, ref_cam, planes, fill=UNOBSERVED_FILL):
    """Validity-weighted mean PSV over an iterable of (image, mask, cam).

    Streaming: one photo is resident at a time.  Voxels never observed
    get the configured fill with validity 0.
    """
    acc = MeanAccumulator(planes, ref_cam.intrinsics.height, ref_cam.intrinsics.width)
    for image, mask, cam in photos:
        acc.add(build_psv(image, mask, cam, ref_cam, planes))
    if acc.count == 0:
        raise DataError("mean_psv needs at least one photo")
    color, validity = acc.mean(fill=fill)
    if not validity.any():
        raise DataError("no photo contributed any valid sample to the PSV")
    return PlaneSweepVolume(ref_cam, planes, color, validity)


def flatten_over(volume, alpha):
    """Over-composite a PSV using external alpha planes.

    alpha may be an array or tensor [D,1,H,W]; sampling validity gates
    it so unobserved voxels are transparent.  Returns the composited
    [3,H,W] image (tensor iff alpha was a tensor).
    """
    if isinstance(alpha, Tensor):
        gated = alpha * volume.validity
    else:
        if alpha.shape != volume.validity.shape:
            raise ShapeError(f"alpha {alpha.shape} does not match volume {volume.validity.shape}")
        gated = alpha * volume.validity
    return composite(volume.color, gated)
