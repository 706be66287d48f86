"""Reference-aligned deep buffer construction for the appearance encoder.

Channel layout (15 total):
  0..2   rectified exemplar: the exemplar's plane-sweep volume flattened
         with the fixed stage-1 alpha (zero wherever never sampled)
  3..5   flattened base color (base planes composited with alpha)
  6..13  flattened latent features (compositing weights applied to each
         feature channel)
  14     validity: weight-normalized fraction of alpha actually covered
         by valid exemplar samples
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, concat
from ..mpi import composite, compositing_weights, weighted_plane_sum
from ..psv import build_psv, flatten_over

BUFFER_CHANNELS = 15


@dataclass
class DeepBuffer:
    channels: Tensor          # [15,H,W]; requires grad iff features do
    validity: np.ndarray      # [H,W]


def build_deep_buffer(mpi, features, exemplar, exemplar_mask, exemplar_cam,
                      psv_cache=None):
    """Assemble the encoder's reference-aligned input stack.

    mpi holds the fixed stage-1 base/alpha; ``features`` may be a tensor
    (training, gradients flow) or an array.  ``psv_cache`` may hold a
    precomputed (rectified, validity) pair for this exemplar since the
    PSV depends only on fixed quantities.
    """
    alpha = mpi.alpha
    w = compositing_weights(alpha)
    if psv_cache is None:
        psv_cache = precompute_exemplar_channels(mpi, exemplar, exemplar_mask, exemplar_cam)
    rect, validity = psv_cache
    flat_base = composite(mpi.base_color, alpha)
    flat_feat = weighted_plane_sum(features, w)
    if not isinstance(flat_feat, Tensor):
        flat_feat = Tensor(flat_feat)
    channels = concat([Tensor(rect), Tensor(flat_base), flat_feat,
                       Tensor(validity[None])], axis=0)
    return DeepBuffer(channels, validity)


def precompute_exemplar_channels(mpi, exemplar, exemplar_mask, exemplar_cam):
    """(rectified, validity) for a fixed exemplar, reusable across iterations."""
    alpha = mpi.alpha
    w = compositing_weights(alpha)
    volume = build_psv(exemplar, exemplar_mask, exemplar_cam, mpi.ref_cam, mpi.planes)
    rect = flatten_over(volume, alpha)
    wsum = w.sum(axis=0)
    covered = (w * volume.validity).sum(axis=0)
    validity = covered[0] / np.maximum(wsum[0], 1e-6)
    return rect, validity
