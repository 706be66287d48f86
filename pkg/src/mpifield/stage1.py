"""Stage 1: two-phase optimization of MPI base color and alpha planes.

Phase A freezes the base color at the mean plane-sweep volume and fits
alpha; phase B then optimizes both jointly.  Both planes live as logits
so decoded values stay strictly inside (0,1).

The reconstruction loss is a masked L1 plus a multi-scale gradient
consistency term computed on pyramids of the *difference* image::

    L = mean_m |e_0| + w_g * sum_s  [ mean_m |dx e_s| + mean_m |dy e_s| ]

with e_0 = pred - target, e_{s+1} = 2x average downsample of e_s, and a
pyramid pixel only counted while every contributing pixel is valid.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from . import defaults
from .autodiff import Adam, Tape, Tensor, avg_downsample2, grad_x, grad_y, parameter, warp_stack
from .errors import DataError, DivergenceError
from .estimator import EstimatorMixin
from .geometry import disparity_depths, stack_homographies
from .metrics import metrics
from .mpi import MultiplaneImage, composite, render_base
from .psv import mean_psv

log = logging.getLogger(__name__)


def _masked_mean_abs(x, mask):
    """mean of |x| over pixels where mask == 1; x is a tensor, mask an array."""
    m = np.ascontiguousarray(mask, dtype=np.float32)
    denom = float(m.sum()) * (x.shape[0] if x.ndim == 3 else 1)
    if denom <= 0:
        return None
    return (x.abs() * m).sum() * (1.0 / denom)


def _downsample_mask(mask):
    # a coarse pixel is valid only if all four children are
    m = mask[..., : mask.shape[-2] - mask.shape[-2] % 2, : mask.shape[-1] - mask.shape[-1] % 2]
    blocks = m.reshape(m.shape[:-2] + (m.shape[-2] // 2, 2, m.shape[-1] // 2, 2))
    return (blocks.min(axis=(-3, -1)) >= 1.0).astype(np.float32)


def recon_loss(pred, target, mask, grad_weight=defaults.GRAD_LOSS_WEIGHT,
               n_scales=defaults.N_SCALES):
    """Masked L1 + multi-scale gradient consistency between pred and target.

    pred: tensor [3,h,w]; target: array [3,h,w]; mask: array [1,h,w] with
    1 marking supervised pixels.  Raises on an all-zero mask.
    """
    mask = np.asarray(mask, dtype=np.float32)
    if mask.sum() == 0:
        raise DataError("reconstruction loss has an all-zero mask")
    e = pred - np.asarray(target, dtype=np.float32)
    loss = _masked_mean_abs(e, mask)
    m = mask
    level = e
    for s in range(n_scales):
        if s > 0:
            level = avg_downsample2(level)
            m = _downsample_mask(m)
            if level.shape[-1] < 2 or level.shape[-2] < 2:
                break
        mx = m[..., :, 1:] * m[..., :, :-1]
        my = m[..., 1:, :] * m[..., :-1, :]
        for term_mask, term in ((mx, grad_x(level)), (my, grad_y(level))):
            t = _masked_mean_abs(term, term_mask)
            if t is not None:
                loss = loss + grad_weight * t
    return loss


class Stage1Reconstructor(EstimatorMixin):
    """Fits MPI base-color and alpha planes to a posed photo collection.

    Estimator-style: hyperparameters in the constructor, ``fit(dataset)``
    learns, fitted state lands in ``mpi_`` / ``history_``.  With
    ``two_phase=False`` both plane sets train jointly from random logits
    for the same total iteration budget (the ablation baseline).
    """

    def __init__(self, planes=defaults.PLANE_COUNT, near=None, far=None,
                 phase_a_iters=defaults.PHASE_A_ITERS,
                 phase_b_iters=defaults.PHASE_B_ITERS,
                 lr_alpha=defaults.LR_ALPHA, lr_joint=defaults.LR_JOINT,
                 grad_loss_weight=defaults.GRAD_LOSS_WEIGHT,
                 n_scales=defaults.N_SCALES, crop=defaults.CROP, seed=0,
                 two_phase=True, log_every=100, checkpoint_every=0,
                 out_dir=None):
        self.planes = planes
        self.near = near
        self.far = far
        self.phase_a_iters = phase_a_iters
        self.phase_b_iters = phase_b_iters
        self.lr_alpha = lr_alpha
        self.lr_joint = lr_joint
        self.grad_loss_weight = grad_loss_weight
        self.n_scales = n_scales
        self.crop = crop
        self.seed = seed
        self.two_phase = two_phase
        self.log_every = log_every
        self.checkpoint_every = checkpoint_every
        self.out_dir = out_dir

    # -- setup -----------------------------------------------------------------

    def _plane_stack(self, dataset):
        near = self.near if self.near is not None else dataset.near
        far = self.far if self.far is not None else dataset.far
        return disparity_depths(near, far, self.planes)

    def _init_params(self, dataset, plane_stack, rng):
        ref_cam = dataset.ref_cam
        photos = dataset.train_photos()
        D = plane_stack.count
        H, W = ref_cam.intrinsics.height, ref_cam.intrinsics.width
        alpha0 = float(np.log((1.0 / D) / (1.0 - 1.0 / D)))
        alpha_logits = parameter(np.full((D, 1, H, W), alpha0, dtype=np.float32),
                                 name="alpha_logits")
        if self.two_phase:
            volume = mean_psv(((p.image, p.mask, p.cam) for p in photos),
                              ref_cam, plane_stack)
            b = np.clip(volume.color, 1e-3, 1.0 - 1e-3)
            base_logits = parameter(np.log(b / (1.0 - b)), name="base_logits")
        else:
            base_logits = parameter(
                rng.normal(0.0, 0.5, (D, 3, H, W)).astype(np.float32),
                name="base_logits")
        return base_logits, alpha_logits

    def _sample_crop(self, rng, photo, homs, decoded_base, alpha_logits):
        K = photo.cam.intrinsics
        w = min(self.crop, K.width)
        h = min(self.crop, K.height)
        for _ in range(20):
            # overdraw beyond the valid range and clip, so border columns
            # and rows are supervised as often as the interior
            ox = _clipped_offset(rng, K.width, w)
            oy = _clipped_offset(rng, K.height, h)
            alphas = alpha_logits.sigmoid()
            warped_a, validity = warp_stack(alphas, homs, (h, w), (ox, oy))
            valid_all = (validity.min(axis=0) >= 1.0).astype(np.float32)
            mask = photo.mask[:, oy:oy + h, ox:ox + w] * valid_all
            if mask.sum() >= 0.05 * h * w:
                warped_b, _ = warp_stack(decoded_base, homs, (h, w), (ox, oy))
                pred = composite(warped_b, warped_a * validity)
                target = photo.image[:, oy:oy + h, ox:ox + w]
                return pred, target, mask
        raise DataError(f"photo '{photo.id}': no crop with enough valid pixels")

    # -- training ---------------------------------------------------------------

    def fit(self, dataset):
        t0 = time.monotonic()
        rng = np.random.default_rng(self.seed)
        plane_stack = self._plane_stack(dataset)
        base_logits, alpha_logits = self._init_params(dataset, plane_stack, rng)
        photos = dataset.train_photos()
        if not photos:
            raise DataError("dataset has no training photos")
        homs = {p.id: stack_homographies(dataset.ref_cam, p.cam, plane_stack)
                for p in photos}

        self.history_ = []
        self._loss_file = None
        out = Path(self.out_dir) if self.out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
            self._loss_file = (out / "stage1_loss.jsonl").open("w")

        if self.two_phase:
            schedule = [("A", self.phase_a_iters, self.lr_alpha, False),
                        ("B", self.phase_b_iters, self.lr_joint, True)]
        else:
            schedule = [("joint", self.phase_a_iters + self.phase_b_iters,
                         self.lr_joint, True)]

        for phase, iters, lr, train_base in schedule:
            params = [base_logits, alpha_logits] if train_base else [alpha_logits]
            opt = Adam(params, lr=lr)
            base_const = None
            if not train_base:
                base_const = Tensor(_sigmoid_np(base_logits.data))
            for it in range(iters):
                photo = photos[int(rng.integers(0, len(photos)))]
                with Tape(params) as tape:
                    decoded_base = base_logits.sigmoid() if train_base else base_const
                    pred, target, mask = self._sample_crop(
                        rng, photo, homs[photo.id], decoded_base, alpha_logits)
                    loss = recon_loss(pred, target, mask,
                                      grad_weight=self.grad_loss_weight,
                                      n_scales=self.n_scales)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise DivergenceError(
                            f"stage-1 phase {phase}: non-finite loss", iteration=it)
                    tape.backward(loss)
                    tape.release()
                opt.step()
                self._record(phase, it, value)
                if out and self.checkpoint_every and (it + 1) % self.checkpoint_every == 0:
                    self._checkpoint(out, plane_stack, dataset, base_logits,
                                     alpha_logits, f"{phase}{it + 1:06d}")

        self.mpi_ = self._decode(dataset, plane_stack, base_logits, alpha_logits)
        self.base_logits_ = base_logits
        self.alpha_logits_ = alpha_logits
        if self._loss_file:
            self._loss_file.close()
            self._loss_file = None
        log.info("stage-1 fit finished in %.1f s", time.monotonic() - t0)
        return self

    def _record(self, phase, it, value):
        rec = {"stage": 1, "phase": phase, "iter": it, "loss": value}
        self.history_.append(rec)
        if self._loss_file:
            self._loss_file.write(json.dumps(rec) + "\n")
        if self.log_every and it % self.log_every == 0:
            log.info("stage1[%s] iter %d loss %.5f", phase, it, value)

    def _decode(self, dataset, plane_stack, base_logits, alpha_logits):
        return MultiplaneImage(dataset.ref_cam, plane_stack,
                               _sigmoid_np(base_logits.data),
                               _sigmoid_np(alpha_logits.data))

    def _checkpoint(self, out, plane_stack, dataset, base_logits, alpha_logits, tag):
        from .io.assets import save_mpi
        save_mpi(out / f"stage1_{tag}.mpi",
                 self._decode(dataset, plane_stack, base_logits, alpha_logits))

    # -- evaluation --------------------------------------------------------------

    def evaluate(self, dataset, which="test"):
        self._check_fitted("mpi_")
        return evaluate_mpi(self.mpi_, dataset, which=which)


def _clipped_offset(rng, full, window):
    if window >= full:
        return 0
    pad = window // 3
    return int(np.clip(rng.integers(-pad, full - window + pad + 1), 0, full - window))


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def evaluate_mpi(mpi, dataset, which="test"):
    """Masked l1/PSNR of base renders against held-out (or train) photos."""
    photos = dataset.test_photos() if which == "test" else dataset.train_photos()
    if not photos:
        raise DataError(f"dataset has no '{which}' photos")
    per_photo = []
    for p in photos:
        from .mpi import warp_mpi
        warped = warp_mpi(mpi, p.cam)
        pred = composite(warped.colors.data, warped.alphas.data)
        valid = (warped.validity.min(axis=0) >= 1.0).astype(np.float32)
        mask = p.mask * valid
        if mask.sum() == 0:
            continue
        m = metrics(pred, p.image, mask)
        m["id"] = p.id
        per_photo.append(m)
    if not per_photo:
        raise DataError("no photo had any valid pixel to evaluate")
    return {
        "per_photo": per_photo,
        "l1": float(np.mean([m["l1"] for m in per_photo])),
        "psnr": float(np.mean([m["psnr"] for m in per_photo])),
    }
