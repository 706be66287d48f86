"""Appearance encoder and per-plane conditioned renderer.

The encoder maps [resized exemplar (3) + deep buffer (15)] = 18 channels
at reference resolution through three stride-2 convs (widths 16/32/32),
a spatial mean-pool, and an affine head to the 16-d appearance vector.

The renderer applies one shared network to every warped plane: two 3x3
convs of width 32, each followed by adaptive instance normalization
conditioned on the appearance vector and a relu, then a 1x1 conv and
sigmoid to RGB.  The AdaIN scales/biases come from a small MLP on z;
its last layer starts at zero so conditioning begins as identity.

Ablation variants: with ``no_adain`` the appearance vector is instead
broadcast and concatenated to every plane's input (16 extra channels)
and the normalizations are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autodiff import Tensor, concat, conv2d, matmul, mean, parameter, relu, sigmoid
from ..errors import ShapeError

ADAIN_EPS = 1e-5
RENDER_WIDTH = 32
ENCODER_WIDTHS = (16, 32, 32)
ENCODER_IN_CHANNELS = 18
PLANE_IN_CHANNELS = 12          # base color 3 + features 8 + disparity 1


def _he_conv(rng, k_out, k_in, kh, kw, gain=1.0, name="conv"):
    std = gain * np.sqrt(2.0 / (k_in * kh * kw))
    w = parameter(rng.normal(0.0, std, (k_out, k_in, kh, kw)).astype(np.float32),
                  name=f"{name}.w")
    b = parameter(np.zeros((k_out, 1, 1), dtype=np.float32), name=f"{name}.b")
    return w, b


def _linear(rng, n_out, n_in, std=None, name="linear"):
    if std is None:
        std = np.sqrt(2.0 / n_in)
    w = parameter(rng.normal(0.0, std, (n_out, n_in)).astype(np.float32),
                  name=f"{name}.w")
    b = parameter(np.zeros(n_out, dtype=np.float32), name=f"{name}.b")
    return w, b


def adain(feat, scale, bias, eps=ADAIN_EPS):
    """Per-channel instance renormalization to (scale, bias).

    feat: [C,H,W] or [N,C,H,W]; scale/bias: [C] tensors or arrays.
    out_c = scale_c * (x_c - mean_c) / (std_c + eps) + bias_c with
    population statistics over the spatial axes of each instance.
    """
    if feat.ndim not in (3, 4):
        raise ShapeError(f"adain expects [C,H,W] or [N,C,H,W], got {feat.shape}")
    c = feat.shape[-3]
    shape = (c, 1, 1)
    scale = scale.reshape(shape) if isinstance(scale, Tensor) else np.reshape(scale, shape)
    bias = bias.reshape(shape) if isinstance(bias, Tensor) else np.reshape(bias, shape)
    mu = mean(feat, axis=(-2, -1), keepdims=True)
    centered = feat - mu
    var = mean(centered * centered, axis=(-2, -1), keepdims=True)
    normed = centered / (var.sqrt() + eps)
    return normed * scale + bias


@dataclass
class EncoderParams:
    conv_w: list
    conv_b: list
    head_w: Tensor
    head_b: Tensor

    @classmethod
    def init(cls, rng, in_channels=ENCODER_IN_CHANNELS, widths=ENCODER_WIDTHS, z_dim=16):
        conv_w, conv_b = [], []
        c = in_channels
        for i, k in enumerate(widths):
            w, b = _he_conv(rng, k, c, 3, 3, name=f"encoder.conv{i}")
            conv_w.append(w)
            conv_b.append(b)
            c = k
        head_w, head_b = _linear(rng, z_dim, c, std=np.sqrt(1.0 / c), name="encoder.head")
        return cls(conv_w, conv_b, head_w, head_b)

    def parameters(self):
        return [*self.conv_w, *self.conv_b, self.head_w, self.head_b]


def encode_features(params, x):
    """Forward pass of the encoder: x [18,H,W] -> z [16]."""
    h = x
    for w, b in zip(params.conv_w, params.conv_b):
        h = relu(conv2d(h, w, stride=2, padding=1) + b)
    pooled = mean(h, axis=(-2, -1))
    return matmul(params.head_w, pooled) + params.head_b


@dataclass
class RendererParams:
    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    out_w: Tensor
    out_b: Tensor
    mlp_w1: Optional[Tensor] = None
    mlp_b1: Optional[Tensor] = None
    mlp_w2: Optional[Tensor] = None
    mlp_b2: Optional[Tensor] = None
    no_adain: bool = False

    @classmethod
    def init(cls, rng, z_dim=16, width=RENDER_WIDTH, no_adain=False):
        in_ch = PLANE_IN_CHANNELS + (z_dim if no_adain else 0)
        c1w, c1b = _he_conv(rng, width, in_ch, 3, 3, name="renderer.conv1")
        c2w, c2b = _he_conv(rng, width, width, 3, 3, name="renderer.conv2")
        ow, ob = _he_conv(rng, 3, width, 1, 1, gain=0.5, name="renderer.out")
        if no_adain:
            return cls(c1w, c1b, c2w, c2b, ow, ob, no_adain=True)
        w1, b1 = _linear(rng, 64, z_dim, name="renderer.mlp1")
        # zero-initialized head: conditioning starts as the identity
        w2 = parameter(np.zeros((4 * width, 64), dtype=np.float32), name="renderer.mlp2.w")
        b2 = parameter(np.zeros(4 * width, dtype=np.float32), name="renderer.mlp2.b")
        return cls(c1w, c1b, c2w, c2b, ow, ob, w1, b1, w2, b2, no_adain=False)

    def parameters(self):
        ps = [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
              self.out_w, self.out_b]
        if not self.no_adain:
            ps += [self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2]
        return ps


def adain_coefficients(params, z):
    """(scale1, bias1, scale2, bias2) from the conditioning MLP.

    Raw outputs are residual around identity: scale = 1 + raw.
    """
    width = params.conv1_w.shape[0]
    hidden = relu(matmul(params.mlp_w1, z) + params.mlp_b1)
    raw = matmul(params.mlp_w2, hidden) + params.mlp_b2
    s1 = _segment(raw, 0, width) + 1.0
    b1 = _segment(raw, width, 2 * width)
    s2 = _segment(raw, 2 * width, 3 * width) + 1.0
    b2 = _segment(raw, 3 * width, 4 * width)
    return s1, b1, s2, b2


def _segment(vec, lo, hi):
    """Differentiable slice of a 1-D tensor."""
    from ..autodiff import make_op

    def backward(g):
        if vec.requires_grad:
            full = np.zeros(vec.shape, dtype=np.float32)
            full[lo:hi] = g
            vec.accumulate_grad(full)

    return make_op(np.ascontiguousarray(vec.data[lo:hi]), "segment", (vec,), backward)


def decode_planes(params, plane_inputs, z):
    """Shared per-plane decode: [D,C,h,w] + z -> RGB planes [D,3,h,w].

    Planes run as a batch through identical weights; with AdaIN each
    plane is normalized independently (instance statistics), so plane
    order cannot influence any plane's output.
    """
    if plane_inputs.ndim != 4:
        raise ShapeError(f"plane inputs must be [D,C,h,w], got {plane_inputs.shape}")
    if params.no_adain:
        D, _, h, w = plane_inputs.shape
        zmap = z.reshape(1, z.shape[0], 1, 1) * Tensor(np.ones((D, 1, h, w), np.float32))
        x = concat([plane_inputs, zmap], axis=1)
        h1 = relu(conv2d(x, params.conv1_w, padding=1) + params.conv1_b)
        h2 = relu(conv2d(h1, params.conv2_w, padding=1) + params.conv2_b)
    else:
        s1, b1, s2, b2 = adain_coefficients(params, z)
        h1 = conv2d(plane_inputs, params.conv1_w, padding=1) + params.conv1_b
        h1 = relu(adain(h1, s1, b1))
        h2 = conv2d(h1, params.conv2_w, padding=1) + params.conv2_b
        h2 = relu(adain(h2, s2, b2))
    return sigmoid(conv2d(h2, params.out_w) + params.out_b)
