"""Procedural layered test scenes with an exact analytic renderer.

A scene is a stack of fronto-parallel textured layers in the reference
frame (world frame == reference camera frame).  Textures and coverage
masks are band-limited sinusoid mixtures, so any camera/appearance
combination can be rendered analytically with no discretization.

Appearance is a scalar t in [0,1] driving two effects:
  * a global color tint, lerped between two endpoint tints
  * a soft shadow band on the background layer whose horizontal position
    moves monotonically with t

The generator is a pure function of (spec, seed): identical inputs give
identical scenes, photos, and ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import defaults
from .errors import DataError, GeometryError
from .geometry import CameraView, Intrinsics, PlaneStack, disparity_depths
from .io.dataset import SceneDataset, ScenePhoto
from .mpi import MultiplaneImage


@dataclass(frozen=True)
class SyntheticSceneSpec:
    layer_depths: tuple = (1.2, 2.5, 6.0)     # near to far; last layer is opaque
    width: int = 96
    height: int = 64
    focal: float = 90.0
    seed: int = 0
    # texture wavelength band, in reference-view pixels at each layer's depth
    texture_px: tuple = (4.5, 26.0)
    texture_components: int = 8
    # coverage masks of non-background layers
    coverage: float = 0.35
    edge_softness: float = 0.08
    # appearance
    tint0: tuple = (1.0, 0.96, 0.88)
    tint1: tuple = (0.82, 0.90, 1.0)
    shadow_strength: float = 0.6
    shadow_halfwidth: float = 0.8             # world units on the background
    shadow_x_range: tuple = (-1.8, 1.8)       # band center at t=0 and t=1
    # camera sampling box (world units) and look-at depth
    cam_lateral: float = 0.85
    cam_vertical: float = 0.45
    cam_forward: float = 0.18
    focus_depth: float = 2.5

    def __post_init__(self):
        if len(self.layer_depths) < 1 or any(d <= 0 for d in self.layer_depths):
            raise DataError("layer depths must be positive")
        if list(self.layer_depths) != sorted(self.layer_depths):
            raise DataError("layer depths must be sorted near to far")


@dataclass
class _Layer:
    depth: float
    freqs: np.ndarray        # [n,2] wave vectors per component
    phases: np.ndarray       # [3,n]
    amps: np.ndarray         # [3,n]
    mask_freqs: Optional[np.ndarray]
    mask_phases: Optional[np.ndarray]


class SceneModel:
    """Frozen procedural parameters plus the analytic ground-truth renderer."""

    def __init__(self, spec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        lo_px, hi_px = spec.texture_px
        self.layers = []
        n = spec.texture_components
        for k, depth in enumerate(spec.layer_depths):
            # wavelengths drawn log-uniform in reference pixels, converted to
            # world frequency at this layer's depth
            lam_px = np.exp(rng.uniform(np.log(lo_px), np.log(hi_px), n))
            mag = 2.0 * np.pi * spec.focal / (lam_px * depth)
            ang = rng.uniform(0, 2 * np.pi, n)
            freqs = np.stack([mag * np.cos(ang), mag * np.sin(ang)], axis=1)
            phases = rng.uniform(0, 2 * np.pi, (3, n))
            amps = rng.uniform(0.05, 0.16, (3, n))
            if k < len(spec.layer_depths) - 1:
                # coverage blobs ~10-30 px across
                blob_px = rng.uniform(18.0, 42.0, 4)
                mmag = 2.0 * np.pi * spec.focal / (blob_px * depth)
                mang = rng.uniform(0, 2 * np.pi, 4)
                mask_freqs = np.stack([mmag * np.cos(mang), mmag * np.sin(mang)], axis=1)
                mask_phases = rng.uniform(0, 2 * np.pi, 4)
            else:
                mask_freqs = mask_phases = None
            self.layers.append(_Layer(depth, freqs, phases, amps, mask_freqs, mask_phases))

    # -- analytic fields -------------------------------------------------------

    def layer_color(self, k, x, y, t=None):
        """Base texture of layer k at world (x, y); shadow applied if t given.

        Per channel: 0.5 + sum_n a_cn * sin(k_n . (x,y) + phi_cn), with the
        wave evaluations shared across channels via the angle-sum identity.
        """
        layer = self.layers[k]
        theta = (np.multiply.outer(layer.freqs[:, 0], x)
                 + np.multiply.outer(layer.freqs[:, 1], y))            # [n,...]
        color = 0.5 + (np.einsum("cn,n...->c...", layer.amps * np.cos(layer.phases),
                                 np.sin(theta))
                       + np.einsum("cn,n...->c...", layer.amps * np.sin(layer.phases),
                                   np.cos(theta)))
        color = np.clip(color, 0.04, 0.96)
        if t is not None and k == len(self.layers) - 1:
            color = color * (1.0 - self.spec.shadow_strength * self.shadow_band(x, t))
        return color

    def shadow_band(self, x, t):
        """Smooth band profile in [0,1] centered at the t-interpolated position."""
        x0, x1 = self.spec.shadow_x_range
        center = (1.0 - t) * x0 + t * x1
        u = (x - center) / self.spec.shadow_halfwidth
        return np.exp(-0.5 * u * u)

    def shadow_center(self, t):
        x0, x1 = self.spec.shadow_x_range
        return (1.0 - t) * x0 + t * x1

    def layer_alpha(self, k, x, y):
        layer = self.layers[k]
        if layer.mask_freqs is None:
            return np.ones_like(x)
        waves = np.sin(np.multiply.outer(layer.mask_freqs[:, 0], x)
                       + np.multiply.outer(layer.mask_freqs[:, 1], y)
                       + layer.mask_phases.reshape((-1,) + (1,) * x.ndim))
        fieldv = waves.mean(axis=0)
        # threshold picked so roughly `coverage` of the plane is opaque
        tau = np.sqrt(2.0 / len(layer.mask_freqs)) * _norm_quantile(1.0 - self.spec.coverage) / 2.0
        s = self.spec.edge_softness
        return np.clip((fieldv - (tau - s)) / (2 * s), 0.0, 1.0)

    def tint(self, t):
        t0 = np.asarray(self.spec.tint0)
        t1 = np.asarray(self.spec.tint1)
        return ((1.0 - t) * t0 + t * t1).reshape(3, 1, 1)

    # -- rendering -------------------------------------------------------------

    def _rays(self, cam):
        K = cam.intrinsics
        us, vs = np.meshgrid(np.arange(K.width, dtype=np.float64),
                             np.arange(K.height, dtype=np.float64))
        d_cam = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy, np.ones_like(us)])
        d_world = np.einsum("ij,jhw->ihw", cam.rotation.T, d_cam)
        return cam.center, d_world

    def render(self, cam, t, with_tint=True):
        """Exact render of the scene at (camera, appearance t) -> [3,H,W]."""
        C, d = self._rays(cam)
        out = np.zeros((3, d.shape[1], d.shape[2]))
        trans = np.ones((d.shape[1], d.shape[2]))
        for k, layer in enumerate(self.layers):
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (layer.depth - C[2]) / d[2]
            hit = (d[2] > 1e-9) & (s > 1e-9)
            x = C[0] + s * d[0]
            y = C[1] + s * d[1]
            color = self.layer_color(k, x, y, t=t)
            alpha = self.layer_alpha(k, x, y) * hit
            out += trans * alpha * color
            trans = trans * (1.0 - alpha)
        if with_tint:
            out = out * self.tint(t)
        return np.clip(out, 0.0, 1.0).astype(np.float32)

    def depth_map(self, cam, opaque_threshold=0.5):
        """Depth of the nearest layer with alpha > threshold along each ray.

        Returns (depth [H,W], hit_mask [H,W]); rays that miss every
        opaque layer report the background depth where it exists.
        """
        C, d = self._rays(cam)
        H, W = d.shape[1], d.shape[2]
        depth = np.zeros((H, W))
        hit = np.zeros((H, W), dtype=bool)
        for k, layer in enumerate(self.layers):
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (layer.depth - C[2]) / d[2]
            valid = (d[2] > 1e-9) & (s > 1e-9)
            x = C[0] + s * d[0]
            y = C[1] + s * d[1]
            alpha = self.layer_alpha(k, x, y)
            opaque = valid & (alpha > opaque_threshold) & ~hit
            depth[opaque] = s[opaque]
            hit |= opaque
        return depth, hit

    def soft_edge_mask(self, cam, lo=0.1, hi=0.9):
        """Pixels whose first-hit coverage is mid-range (layer boundaries)."""
        C, d = self._rays(cam)
        H, W = d.shape[1], d.shape[2]
        soft = np.zeros((H, W), dtype=bool)
        occluded = np.zeros((H, W), dtype=bool)
        for k, layer in enumerate(self.layers[:-1]):
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (layer.depth - C[2]) / d[2]
            valid = (d[2] > 1e-9) & (s > 1e-9)
            x = C[0] + s * d[0]
            y = C[1] + s * d[1]
            alpha = self.layer_alpha(k, x, y)
            soft |= valid & ~occluded & (alpha > lo) & (alpha < hi)
            occluded |= valid & (alpha >= hi)
        return soft


def _norm_quantile(p):
    # Acklam-style rational approximation; adequate for mask thresholds.
    from math import sqrt, log
    if not 0 < p < 1:
        raise ValueError("quantile needs 0<p<1")
    a = [-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00]
    b = [-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01]
    c = [-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00]
    d = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00]
    plow, phigh = 0.02425, 1 - 0.02425
    if p < plow:
        q = sqrt(-2 * log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    if p > phigh:
        q = sqrt(-2 * log(1 - p))
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)


def _look_at(center, target):
    f = np.asarray(target, dtype=np.float64) - center
    f = f / np.linalg.norm(f)
    r = np.cross([0.0, 1.0, 0.0], f)
    r = r / np.linalg.norm(r)
    u = np.cross(f, r)
    R = np.stack([r, u, f])
    return R, -R @ center


def reference_camera(spec):
    intr = Intrinsics(spec.focal, spec.focal, spec.width / 2.0, spec.height / 2.0,
                      spec.width, spec.height)
    return CameraView(intr, np.eye(3), np.zeros(3))


def sample_camera(spec, rng, scale=1.0):
    """Random viewpoint looking at the scene center.

    Offset magnitudes are drawn uniformly over most of the extent, so
    baselines span small to large without clustering at zero; `scale`
    shrinks the sampling box (e.g. for held-out views nearer the
    reference).
    """
    def draw(extent):
        mag = rng.uniform(0.1 * extent, extent) * scale
        return mag * (1.0 if rng.random() < 0.5 else -1.0)

    center = np.array([
        draw(spec.cam_lateral),
        draw(spec.cam_vertical),
        rng.uniform(-spec.cam_forward, spec.cam_forward) * scale,
    ])
    jitter = rng.uniform(-0.15, 0.15, 3) * np.array([1.0, 1.0, 0.0])
    R, t = _look_at(center, np.array([0.0, 0.0, spec.focus_depth]) + jitter)
    return CameraView(reference_camera(spec).intrinsics, R, t)


def generate_synthetic(spec, n_views, ts=None, view_seed=None, n_test=None,
                       test_baseline_scale=1.0):
    """Render a posed photo collection from a synthetic scene.

    ts: appearance parameter per view; a scalar applies to every view,
    None samples uniformly.  The reference view (id 'ref') is photo 0 at
    the first t.  The last n_test views form the test split and their
    camera box may be scaled (held-out views near the reference).
    Returns (SceneDataset, SceneModel).
    """
    if n_views < 1:
        raise DataError("need at least one view")
    model = SceneModel(spec)
    rng = np.random.default_rng(spec.seed + 1 if view_seed is None else view_seed)
    if ts is None:
        ts = rng.uniform(0.0, 1.0, n_views)
    elif np.isscalar(ts):
        ts = np.full(n_views, float(ts))
    else:
        ts = np.asarray(ts, dtype=np.float64)
        if ts.size != n_views:
            raise DataError(f"got {ts.size} t values for {n_views} views")

    if n_test is None:
        n_test_eff = max(1, int(round(n_views * (1.0 - defaults.TRAIN_FRACTION)))) if n_views > 1 else 0
    else:
        n_test_eff = n_test
    cams = [reference_camera(spec)]
    for i in range(n_views - 1):
        scale = test_baseline_scale if i + 1 >= n_views - n_test_eff else 1.0
        cams.append(sample_camera(spec, rng, scale=scale))

    photos = []
    for i, (cam, t) in enumerate(zip(cams, ts)):
        pid = "ref" if i == 0 else f"v{i:03d}"
        image = model.render(cam, float(t))
        mask = np.ones((1, spec.height, spec.width), dtype=np.float32)
        photos.append(ScenePhoto(pid, cam, image, mask))

    # sparse scene points: depths of random layer hits from the reference view
    depth, hit = model.depth_map(cams[0])
    dvals = depth[hit]
    pick = rng.choice(dvals.size, size=min(256, dvals.size), replace=False)
    points = [float(v) for v in dvals[pick]]

    ids = [p.id for p in photos]
    test_ids = ids[-n_test_eff:] if n_test_eff else []
    train_ids = [i for i in ids if i not in set(test_ids)]

    near = min(spec.layer_depths) * 0.85
    far = max(spec.layer_depths) * 1.35
    dataset = SceneDataset(None, photos, "ref", near, far, train_ids, test_ids,
                           points)
    return dataset, model


def aligned_spec(spec, near, far, plane_count, plane_indices):
    """Respec layer depths to sit exactly on chosen disparity planes."""
    planes = disparity_depths(near, far, plane_count)
    depths = tuple(float(planes.depths[i]) for i in plane_indices)
    return replace(spec, layer_depths=depths)


def multiview_support(model, dataset, min_views=None):
    """Count, per reference pixel, the training views that actually observe
    its ground-truth surface point (in frustum and unoccluded).

    Pixels observed in few views are unconstrained by the data; depth
    evaluations restrict to pixels with support >= min_views (default:
    half the training views).  Returns (support_count [H,W], mask [H,W]).
    """
    ref_cam = dataset.ref_cam
    depth, hit = model.depth_map(ref_cam)
    K = ref_cam.intrinsics
    us, vs = np.meshgrid(np.arange(K.width, dtype=np.float64),
                         np.arange(K.height, dtype=np.float64))
    # world point of each reference pixel at its GT depth
    pc = np.stack([(us - K.cx) / K.fx * depth, (vs - K.cy) / K.fy * depth, depth])
    support = np.zeros(depth.shape, dtype=np.int32)
    train = dataset.train_photos()
    for photo in train:
        cam = photo.cam
        p = np.einsum("ij,jhw->ihw", cam.rotation, pc) + cam.translation.reshape(3, 1, 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = cam.intrinsics.fx * p[0] / p[2] + cam.intrinsics.cx
            v = cam.intrinsics.fy * p[1] / p[2] + cam.intrinsics.cy
        inb = (p[2] > 0) & (u >= 0) & (u <= cam.intrinsics.width - 1) \
            & (v >= 0) & (v <= cam.intrinsics.height - 1)
        vdepth, vhit = model.depth_map(cam)
        ui = np.clip(np.round(u).astype(int), 0, cam.intrinsics.width - 1)
        vi = np.clip(np.round(v).astype(int), 0, cam.intrinsics.height - 1)
        seen_depth = vdepth[vi, ui]
        visible = inb & vhit[vi, ui] & (np.abs(seen_depth - p[2]) < 0.05 * p[2] + 1e-3)
        support += (visible & hit).astype(np.int32)
    if min_views is None:
        min_views = max(1, len(train) // 2)
    return support, (support >= min_views) & hit


def shadow_centroids(frames):
    """Horizontal shadow-band centroid per frame, from column luminance.

    Each frame's column profile is normalized by its own mean (removing
    the global tint), the per-column maximum over all frames serves as
    the unshadowed reference, and the centroid of the deficit localizes
    the band.  Frames must share the camera.
    """
    profs = []
    for im in frames:
        col = np.asarray(im).mean(axis=(0, 1))
        profs.append(col / col.mean())
    profs = np.stack(profs)
    ref_prof = profs.max(axis=0)
    cents = []
    for p in profs:
        deficit = np.maximum(ref_prof - p, 0.0)
        cents.append(float((np.arange(p.size) * deficit).sum() / max(deficit.sum(), 1e-9)))
    return cents


def spearman_rho(a, b):
    """Spearman rank correlation of two equal-length sequences."""
    a = np.asarray(a)
    b = np.asarray(b)
    ra = np.argsort(np.argsort(a)).astype(np.float64)
    rb = np.argsort(np.argsort(b)).astype(np.float64)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    return float((ra * rb).sum() / denom) if denom > 0 else 0.0


def mpi_from_scene(model, ref_cam, planes, t=None):
    """Oracle MPI: scene textures sampled on the reference lattice with
    one-hot-style alpha at each layer's plane.

    With t given, bakes that appearance; otherwise the neutral textures.
    """
    spec = model.spec
    D = planes.count
    H, W = ref_cam.intrinsics.height, ref_cam.intrinsics.width
    base = np.zeros((D, 3, H, W), dtype=np.float32)
    alpha = np.zeros((D, 1, H, W), dtype=np.float32)
    base[:] = 0.5
    us, vs = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    K = ref_cam.intrinsics
    tint = model.tint(t) if t is not None else 1.0
    for k, layer in enumerate(model.layers):
        d = planes.nearest_plane(layer.depth)
        x = (us - K.cx) / K.fx * layer.depth
        y = (vs - K.cy) / K.fy * layer.depth
        color = np.clip(model.layer_color(k, x, y, t=t) * tint, 0.0, 1.0)
        base[d] = color.astype(np.float32)
        alpha[d, 0] = model.layer_alpha(k, x, y).astype(np.float32)
    return MultiplaneImage(ref_cam, planes, base, alpha)
