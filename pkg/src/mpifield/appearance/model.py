"""Stage 2: latent feature planes, appearance encoding, conditioned rendering.

Training jointly optimizes the per-voxel feature planes, the encoder,
and the renderer to reconstruct each training photo from itself (the
exemplar is the reconstruction target).  The stage-1 base color and
alpha stay frozen throughout; alpha in particular is the precomputed
compositing weight source for every render.

Loss = reconstruction (L1 + multi-scale gradient) + style weight * RGB
Gram style loss; an adversarial term is wired (weight, default 0) but
no discriminator ships, see README.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .. import defaults
from ..autodiff import Adam, Tape, Tensor, concat, parameter, warp_stack
from ..errors import DataError, DivergenceError, ShapeError
from ..estimator import EstimatorMixin
from ..geometry import interpolate_views, stack_homographies
from ..io.images import resize_bilinear
from ..mpi import composite
from ..stage1 import recon_loss, _clipped_offset
from .buffer import build_deep_buffer, precompute_exemplar_channels
from .losses import style_loss
from .nets import EncoderParams, RendererParams, decode_planes, encode_features

log = logging.getLogger(__name__)


class AppearanceModel(EstimatorMixin):
    """Trains and applies the appearance stage over a fixed stage-1 MPI."""

    def __init__(self, iters=defaults.STAGE2_ITERS, lr=defaults.STAGE2_LR,
                 style_weight=defaults.STYLE_WEIGHT, gan_weight=defaults.GAN_WEIGHT,
                 crop=defaults.CROP, seed=0, feature_dim=defaults.FEATURE_DIM,
                 z_dim=defaults.APPEARANCE_DIM,
                 grad_loss_weight=defaults.GRAD_LOSS_WEIGHT,
                 n_scales=defaults.N_SCALES,
                 no_adain=False, no_features=False, no_deepbuffer=False,
                 log_every=200, out_dir=None):
        self.iters = iters
        self.lr = lr
        self.style_weight = style_weight
        self.gan_weight = gan_weight
        self.crop = crop
        self.seed = seed
        self.feature_dim = feature_dim
        self.z_dim = z_dim
        self.grad_loss_weight = grad_loss_weight
        self.n_scales = n_scales
        self.no_adain = no_adain
        self.no_features = no_features
        self.no_deepbuffer = no_deepbuffer
        self.log_every = log_every
        self.out_dir = out_dir

    # -- training ----------------------------------------------------------------

    def fit(self, dataset, mpi):
        t0 = time.monotonic()
        rng = np.random.default_rng(self.seed)
        self.mpi_ = mpi
        D = mpi.depth_count
        H, W = mpi.height, mpi.width

        self.features_ = parameter(
            np.zeros((D, self.feature_dim, H, W), np.float32) if self.no_features
            else rng.normal(0.0, 0.1, (D, self.feature_dim, H, W)).astype(np.float32),
            name="features")
        self.encoder_ = EncoderParams.init(rng, z_dim=self.z_dim)
        self.renderer_ = RendererParams.init(rng, z_dim=self.z_dim, no_adain=self.no_adain)
        self.iterations_done_ = 0

        photos = dataset.train_photos()
        if not photos:
            raise DataError("dataset has no training photos")
        pre = {}
        for p in photos:
            pre[p.id] = {
                "psv": precompute_exemplar_channels(mpi, p.image, p.mask, p.cam),
                "resized": resize_bilinear(p.image, W, H),
                "homs": stack_homographies(mpi.ref_cam, p.cam, mpi.planes),
            }
        alpha_snapshot = mpi.alpha.copy()
        base_t = Tensor(mpi.base_color)
        disp = self._disparity_channel(mpi)

        params = self.encoder_.parameters() + self.renderer_.parameters()
        if not self.no_features:
            params = [self.features_] + params
        opt = Adam(params, lr=self.lr)

        self.history_ = []
        self._loss_file = None
        out = Path(self.out_dir) if self.out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
            self._loss_file = (out / "stage2_loss.jsonl").open("w")

        for it in range(self.iters):
            photo = photos[int(rng.integers(0, len(photos)))]
            cache = pre[photo.id]
            with Tape(params) as tape:
                z = self._encode_tensor(cache["resized"], cache["psv"])
                pred, target, mask = self._render_crop(
                    photo, cache["homs"], base_t, disp, z, rng)
                loss = recon_loss(pred, target, mask,
                                  grad_weight=self.grad_loss_weight,
                                  n_scales=self.n_scales)
                if self.style_weight > 0:
                    m3 = np.broadcast_to(mask, target.shape).astype(np.float32)
                    loss = loss + self.style_weight * style_loss(pred * m3, target * m3)
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergenceError("stage-2: non-finite loss", iteration=it)
                tape.backward(loss)
                tape.release()
            opt.step()
            self.iterations_done_ = it + 1
            self._record(it, value)

        if not np.array_equal(alpha_snapshot, mpi.alpha):
            raise RuntimeError("stage-2 training mutated the stage-1 alpha planes")
        if self._loss_file:
            self._loss_file.close()
            self._loss_file = None
        log.info("stage-2 fit finished in %.1f s", time.monotonic() - t0)
        return self

    def _record(self, it, value):
        rec = {"stage": 2, "iter": it, "loss": value}
        self.history_.append(rec)
        if self._loss_file:
            self._loss_file.write(json.dumps(rec) + "\n")
        if self.log_every and it % self.log_every == 0:
            log.info("stage2 iter %d loss %.5f", it, value)

    def _disparity_channel(self, mpi):
        disp = mpi.planes.disparities
        lo, hi = disp.min(), disp.max()
        span = hi - lo if hi > lo else 1.0
        return ((disp - lo) / span).astype(np.float32)

    def _encode_tensor(self, resized_exemplar, psv_cache):
        buffer = build_deep_buffer(self.mpi_, self.features_, None, None, None,
                                   psv_cache=psv_cache)
        channels = buffer.channels
        if self.no_deepbuffer:
            channels = Tensor(np.zeros(channels.shape, np.float32))
        x = concat([Tensor(resized_exemplar), channels], axis=0)
        return encode_features(self.encoder_, x)

    def _render_crop(self, photo, homs, base_t, disp, z, rng):
        K = photo.cam.intrinsics
        w = min(self.crop, K.width)
        h = min(self.crop, K.height)
        for _ in range(20):
            ox = _clipped_offset(rng, K.width, w)
            oy = _clipped_offset(rng, K.height, h)
            warped_a, validity = warp_stack(Tensor(self.mpi_.alpha), homs, (h, w), (ox, oy))
            valid_all = (validity.min(axis=0) >= 1.0).astype(np.float32)
            mask = photo.mask[:, oy:oy + h, ox:ox + w] * valid_all
            if mask.sum() >= 0.05 * h * w:
                colors = self._decode_window(homs, base_t, disp, z, (h, w), (ox, oy))
                pred = composite(colors, Tensor(warped_a.data * validity))
                target = photo.image[:, oy:oy + h, ox:ox + w]
                return pred, target, mask
        raise DataError(f"photo '{photo.id}': no crop with enough valid pixels")

    def _decode_window(self, homs, base_t, disp, z, hw, offset):
        h, w = hw
        D = self.mpi_.depth_count
        warped_b, _ = warp_stack(base_t, homs, hw, offset)
        feats = self.features_
        if self.no_features:
            feats = Tensor(self.features_.data)
        warped_f, _ = warp_stack(feats, homs, hw, offset)
        disp_chan = Tensor(np.broadcast_to(
            disp.reshape(D, 1, 1, 1), (D, 1, h, w)).copy())
        plane_in = concat([warped_b, warped_f, disp_chan], axis=1)
        return decode_planes(self.renderer_, plane_in, z)

    # -- inference ------------------------------------------------------------------

    def encode(self, exemplar, exemplar_cam, exemplar_mask=None):
        """Appearance vector of a posed exemplar photo -> [16] array."""
        self._check_fitted("encoder_")
        resized = resize_bilinear(exemplar, self.mpi_.width, self.mpi_.height)
        cache = precompute_exemplar_channels(self.mpi_, exemplar, exemplar_mask,
                                             exemplar_cam)
        return self._encode_tensor(resized, cache).data.copy()

    def render(self, tgt_cam, z, crop=None):
        """Appearance-conditioned novel view -> [3,h,w] array."""
        self._check_fitted("renderer_")
        mpi = self.mpi_
        K = tgt_cam.intrinsics
        ox, oy, w, h = crop if crop is not None else (0, 0, K.width, K.height)
        z_t = z if isinstance(z, Tensor) else Tensor(np.asarray(z, np.float32))
        if z_t.shape != (self.z_dim,):
            raise ShapeError(f"appearance vector must be [{self.z_dim}], got {z_t.shape}")
        homs = stack_homographies(mpi.ref_cam, tgt_cam, mpi.planes)
        disp = self._disparity_channel(mpi)
        colors = self._decode_window(homs, Tensor(mpi.base_color), disp, z_t,
                                     (h, w), (ox, oy))
        warped_a, validity = warp_stack(Tensor(mpi.alpha), homs, (h, w), (ox, oy))
        return composite(colors.data, warped_a.data * validity)

    def interpolate(self, z0, z1, t):
        return interpolate_appearance(z0, z1, t)

    def render_path(self, cameras, z_keyframes, n_frames):
        return render_4d(self, cameras, z_keyframes, n_frames)

    def decode_reference_planes(self, z):
        """RGB planes decoded at the reference view (for asset baking)."""
        self._check_fitted("renderer_")
        mpi = self.mpi_
        D = mpi.depth_count
        disp = self._disparity_channel(mpi)
        disp_chan = np.broadcast_to(disp.reshape(D, 1, 1, 1),
                                    (D, 1, mpi.height, mpi.width)).copy()
        plane_in = concat([Tensor(mpi.base_color),
                           Tensor(self.features_.data),
                           Tensor(disp_chan)], axis=1)
        z_t = z if isinstance(z, Tensor) else Tensor(np.asarray(z, np.float32))
        return decode_planes(self.renderer_, plane_in, z_t).data


def interpolate_appearance(z0, z1, t):
    """Linear interpolation of appearance vectors; t clamped to [0,1]."""
    if not 0.0 <= t <= 1.0:
        log.warning("interpolation parameter %.3f outside [0,1]; clamping", t)
        t = min(max(t, 0.0), 1.0)
    z0 = np.asarray(z0, dtype=np.float32)
    z1 = np.asarray(z1, dtype=np.float32)
    if z0.shape != z1.shape:
        raise ShapeError(f"appearance vectors differ in shape: {z0.shape} vs {z1.shape}")
    return (1.0 - t) * z0 + t * z1


def render_4d(model, cameras, z_keyframes, n_frames):
    """Frames along a joint camera/appearance path.

    Cameras interpolate by pose slerp + linear translation/intrinsics;
    appearance vectors piecewise-linearly.  n_frames >= 2 includes both
    endpoints exactly.
    """
    cameras = list(cameras)
    zs = [np.asarray(z, dtype=np.float32) for z in z_keyframes]
    if len(cameras) < 2 or len(zs) < 2:
        raise DataError("need at least two cameras and two appearance keyframes")
    if n_frames < 2:
        raise DataError("need at least two frames")
    frames = []
    for i in range(n_frames):
        u = i / (n_frames - 1)
        cam = _interp_list(cameras, u, interpolate_views)
        z = _interp_list(zs, u, lambda a, b, s: (1 - s) * a + s * b)
        frames.append(model.render(cam, z))
    return frames


def _interp_list(items, u, blend):
    if u >= 1.0:
        return items[-1]
    pos = u * (len(items) - 1)
    i = int(pos)
    s = pos - i
    if s == 0.0:
        return items[i]
    return blend(items[i], items[i + 1], s)
