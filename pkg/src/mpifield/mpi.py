"""Multiplane images: the data structure, over-compositing, warping, rendering.

Plane index 0 is the nearest plane.  The over operation, front to back:

    out = sum_d  c_d * w_d,   w_d = alpha_d * prod_{d' < d} (1 - alpha_{d'})

Colors are stored straight (non-premultiplied); premultiplication happens
inside the composite.  ``composite`` dispatches on its inputs: plain
arrays give a plain-array fast path, tensors give a differentiable op.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geometry
from .autodiff import Tensor, make_op, warp_stack
from .autodiff import tensor as _tensor
from .autodiff.kernels import warp_composite_rgba
from .errors import GeometryError, ShapeError

log = logging.getLogger(__name__)

PSEUDO_DEPTH_EPS = 1e-4  # validity floor for weight normalization


@dataclass
class MultiplaneImage:
    """Reference-frame plane stack with color/alpha and optional latent features."""

    ref_cam: geometry.CameraView
    planes: geometry.PlaneStack
    base_color: np.ndarray          # [D,3,H,W] in [0,1]
    alpha: np.ndarray               # [D,1,H,W] in [0,1]
    features: Optional[np.ndarray] = None   # [D,F,H,W]

    def __post_init__(self):
        self.base_color = np.ascontiguousarray(self.base_color, dtype=np.float32)
        self.alpha = np.ascontiguousarray(self.alpha, dtype=np.float32)
        D = self.planes.count
        if self.base_color.ndim != 4 or self.base_color.shape[0] != D or self.base_color.shape[1] != 3:
            raise ShapeError(f"base_color must be [D,3,H,W] with D={D}, got {self.base_color.shape}")
        if self.alpha.shape != (D, 1) + self.base_color.shape[2:]:
            raise ShapeError(f"alpha must be [D,1,H,W] matching base_color, got {self.alpha.shape}")
        if self.features is not None:
            self.features = np.ascontiguousarray(self.features, dtype=np.float32)
            if (self.features.ndim != 4 or self.features.shape[0] != D
                    or self.features.shape[2:] != self.base_color.shape[2:]):
                raise ShapeError(f"features must be [D,F,H,W], got {self.features.shape}")
        for name, arr in (("base_color", self.base_color), ("alpha", self.alpha)):
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ShapeError(f"{name} must lie in [0,1], got range "
                                 f"[{arr.min():.4g}, {arr.max():.4g}]")
        self._rgba_cache = None

    @property
    def depth_count(self):
        return self.planes.count

    @property
    def feature_dim(self):
        return 0 if self.features is None else self.features.shape[1]

    @property
    def height(self):
        return self.base_color.shape[2]

    @property
    def width(self):
        return self.base_color.shape[3]

    def interleaved_rgba(self):
        """Cached [D, H*W, 4] straight-alpha buffer for the fused render path."""
        if self._rgba_cache is None:
            D, _, H, W = self.base_color.shape
            buf = np.empty((D, H * W, 4), dtype=np.float32)
            buf[:, :, :3] = self.base_color.transpose(0, 2, 3, 1).reshape(D, H * W, 3)
            buf[:, :, 3] = self.alpha.reshape(D, H * W)
            self._rgba_cache = buf
        return self._rgba_cache


@dataclass
class WarpedPlaneStack:
    """An MPI's channels inverse-warped into a target view window."""

    colors: Tensor                  # [D,3,h,w]
    alphas: Tensor                  # [D,1,h,w], already zeroed where invalid
    validity: np.ndarray            # [D,1,h,w] sampling validity
    features: Optional[Tensor] = None   # [D,F,h,w]


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- compositing ----------------------------------------------------------------

def _weights_np(alphas):
    # alphas [D,1,H,W] -> w_d = a_d * prod_{d'<d} (1 - a_{d'})
    trans = np.cumprod(1.0 - alphas, axis=0, dtype=np.float64)
    excl = np.concatenate([np.ones_like(trans[:1]), trans[:-1]], axis=0)
    return (alphas * excl).astype(_tensor.FLOAT), excl.astype(_tensor.FLOAT)


def compositing_weights(alphas):
    """Per-plane contribution weights of the over operation.

    Guarantees ``composite(c, a) == sum_d w_d * c_d`` elementwise.
    Accepts [D,1,H,W] (or any [D,...]) arrays or tensors; returns an
    array of the same shape.
    """
    a = alphas.data if isinstance(alphas, Tensor) else np.asarray(alphas, dtype=np.float32)
    return _weights_np(a)[0]


def composite(colors, alphas):
    """Back-to-front over of [D,C,H,W] colors with [D,1,H,W] alphas -> [C,H,W].

    Differentiable in both inputs when given tensors on an active tape.
    """
    ct, at = _as_tensor(colors), _as_tensor(alphas)
    if ct.ndim != 4 or at.ndim != 4 or at.shape[1] != 1:
        raise ShapeError(f"composite expects colors [D,C,H,W], alphas [D,1,H,W]; "
                         f"got {ct.shape} and {at.shape}")
    if ct.shape[0] != at.shape[0] or ct.shape[2:] != at.shape[2:]:
        raise ShapeError(f"composite: colors {ct.shape} and alphas {at.shape} mismatch")
    w, excl = _weights_np(at.data)
    out = (w.astype(np.float64) * ct.data).sum(axis=0).astype(_tensor.FLOAT)

    def backward(g):
        if ct.requires_grad:
            ct.accumulate_grad(w * g[None])
        if at.requires_grad:
            # d out / d a_d = T_d * (c_d - S_d), S_d = composite of planes behind d
            D = ct.shape[0]
            S = np.zeros_like(ct.data)
            for d in range(D - 2, -1, -1):
                S[d] = at.data[d + 1] * ct.data[d + 1] + (1.0 - at.data[d + 1]) * S[d + 1]
            ga = (excl * (ct.data - S) * g[None]).sum(axis=1, keepdims=True)
            at.accumulate_grad(ga.astype(np.float32))

    result = make_op(out, "composite", (ct, at), backward)
    if not isinstance(colors, Tensor) and not isinstance(alphas, Tensor):
        return result.data
    return result


def weighted_plane_sum(values, weights):
    """sum_d w_d * v_d with fixed [D,1,H,W] weights; differentiable in values.

    Used to flatten feature planes with precomputed compositing weights.
    """
    vt = _as_tensor(values)
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float32)
    out = (w.astype(np.float64) * vt.data).sum(axis=0).astype(_tensor.FLOAT)

    def backward(g):
        if vt.requires_grad:
            vt.accumulate_grad((w * g[None]).astype(np.float32))

    result = make_op(out, "weighted_plane_sum", (vt,), backward)
    return result if isinstance(values, Tensor) else result.data


# -- warping ----------------------------------------------------------------------

def _homography_stack(mpi, tgt):
    """Target->reference homographies per plane; degenerate planes return None."""
    hs = np.zeros((mpi.depth_count, 3, 3))
    bad = []
    for d, depth in enumerate(mpi.planes.depths):
        try:
            hs[d] = geometry.plane_homography(mpi.ref_cam, tgt, depth)
        except GeometryError:
            bad.append(d)
            hs[d] = np.full((3, 3), np.nan)
    if bad:
        log.warning("degenerate homography for plane(s) %s; treating them as fully invalid", bad)
    return hs, bad


def warp_mpi(mpi, tgt, crop=None, with_features=False):
    """Inverse-warp an MPI into a target camera (optionally a crop window).

    crop: (ox, oy, w, h) window in target pixel coordinates; default full
    frame.  Returns a :class:`WarpedPlaneStack` whose alpha is already
    multiplied by sampling validity, so out-of-frustum content composites
    as transparent.
    """
    K = tgt.intrinsics
    ox, oy, w, h = crop if crop is not None else (0, 0, K.width, K.height)

    if tgt.same_view(mpi.ref_cam) and (w, h) == (mpi.width, mpi.height) and (ox, oy) == (0, 0):
        # Identity warp: bypass sampling so the reference view is exact.
        colors = Tensor(mpi.base_color)
        alphas = Tensor(mpi.alpha)
        feats = Tensor(mpi.features) if with_features and mpi.features is not None else None
        validity = np.ones_like(mpi.alpha)
        return WarpedPlaneStack(colors, alphas, validity, feats)

    hs, bad = _homography_stack(mpi, tgt)
    for d in bad:
        hs[d] = 0.0
        hs[d, 2, 2] = 1.0
        hs[d, 0, 2] = -1e9  # maps every pixel out of bounds -> invalid
    colors, _ = warp_stack(Tensor(mpi.base_color), hs, (h, w), (ox, oy))
    alphas_raw, validity = warp_stack(Tensor(mpi.alpha), hs, (h, w), (ox, oy))
    alphas = alphas_raw * validity
    feats = None
    if with_features and mpi.features is not None:
        feats, _ = warp_stack(Tensor(mpi.features), hs, (h, w), (ox, oy))
    return WarpedPlaneStack(colors, alphas, validity, feats)


# -- rendering ---------------------------------------------------------------------

def render_base(mpi, tgt, crop=None):
    """Render the base-color image at a target view; returns [3,h,w] float32."""
    warped = warp_mpi(mpi, tgt, crop=crop)
    return composite(warped.colors.data, warped.alphas.data)


class PlaneRenderer:
    """Fused warp+composite renderer over a fixed MPI.

    Precomputes the interleaved RGBA buffer once; each ``render_base``
    call then runs a single fused kernel pass with per-pixel early
    termination.  Read-only over the MPI, safe to call from worker
    threads.
    """

    def __init__(self, mpi):
        self.mpi = mpi
        self._rgba = mpi.interleaved_rgba()

    def render_base(self, tgt, crop=None):
        mpi = self.mpi
        K = tgt.intrinsics
        ox, oy, w, h = crop if crop is not None else (0, 0, K.width, K.height)
        if tgt.same_view(mpi.ref_cam) and (w, h) == (mpi.width, mpi.height) and (ox, oy) == (0, 0):
            return composite(mpi.base_color, mpi.alpha)
        hs, bad = _homography_stack(mpi, tgt)
        for d in bad:
            hs[d] = 0.0
            hs[d, 2, 2] = 1.0
            hs[d, 0, 2] = -1e9
        hsf = np.ascontiguousarray(hs.reshape(-1, 9).astype(np.float32))
        out = np.empty((h * w, 3), dtype=np.float32)
        trans = np.empty(h * w, dtype=np.float32)
        warp_composite_rgba(self._rgba, mpi.height, mpi.width, hsf, ox, oy, h, w, out, trans)
        return np.ascontiguousarray(out.reshape(h, w, 3).transpose(2, 0, 1))


def pseudo_depth(mpi, cam=None):
    """Expected depth under compositing weights; diagnostic of alpha quality.

    Returns (depth [H,W], valid [H,W] bool).  Pixels whose total weight
    falls below the validity floor are flagged invalid and get depth 0.
    """
    if cam is None or cam.same_view(mpi.ref_cam):
        alphas = mpi.alpha
    else:
        alphas = warp_mpi(mpi, cam).alphas.data
    w = compositing_weights(alphas)[:, 0]            # [D,H,W]
    disp = mpi.planes.disparities.astype(np.float32)[:, None, None]
    wsum = w.sum(axis=0, dtype=np.float64).astype(np.float32)
    valid = wsum >= PSEUDO_DEPTH_EPS
    mean_disp = (w * disp).sum(axis=0, dtype=np.float64).astype(np.float32)
    mean_disp = mean_disp / np.maximum(wsum, PSEUDO_DEPTH_EPS)
    depth = np.zeros_like(wsum)
    np.divide(1.0, mean_disp, out=depth, where=valid & (mean_disp > 0))
    return depth, valid
