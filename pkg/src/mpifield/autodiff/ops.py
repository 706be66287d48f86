"""Differentiable operations over :class:`Tensor`.

Binary elementwise ops broadcast numpy-style; their backward pass sums
gradients over the broadcast axes.  Reductions accumulate in float64.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import kernels
from . import tensor as _tensor
from .tensor import Tensor, constant, make_op


def _wrap(x):
    return x if isinstance(x, Tensor) else constant(np.asarray(x, dtype=np.float32))


def _unbroadcast(grad, shape):
    # Sum grad down to `shape` (inverse of numpy broadcasting).  Gradient
    # sums stay in float32: their magnitudes are homogeneous and the
    # optimizer tolerates far more noise than this introduces.
    if grad.shape == shape:
        return grad
    g = grad
    if g.ndim > len(shape):
        g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    axes = tuple(ax for ax, n in enumerate(shape) if n == 1 and g.shape[ax] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- binary elementwise -------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return make_op(a.data + b.data, "add", (a, b), backward)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return make_op(a.data - b.data, "sub", (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return make_op(a.data * b.data, "mul", (a, b), backward)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "div")
    inv = 1.0 / b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * inv, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data * inv * inv, b.shape))

    return make_op(a.data * inv, "div", (a, b), backward)


# -- unary elementwise --------------------------------------------------------

def relu(a):
    a = _wrap(a)
    mask = a.data > 0

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * mask)

    return make_op(np.where(mask, a.data, np.float32(0.0)), "relu", (a,), backward)


def sigmoid(a):
    a = _wrap(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * out * (1.0 - out))

    return make_op(out, "sigmoid", (a,), backward)


def abs_(a):
    a = _wrap(a)
    sign = np.sign(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * sign)

    return make_op(np.abs(a.data), "abs", (a,), backward)


def sqrt_(a):
    a = _wrap(a)
    out = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * (0.5 / np.maximum(out, np.float32(1e-12))))

    return make_op(out, "sqrt", (a,), backward)


def scale(a, k):
    """Multiply by a python constant."""
    return mul(a, float(k))


# -- reductions and resampling ------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = _wrap(a)
    if a.size == 0:
        raise ShapeError("sum of empty tensor")
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(_tensor.FLOAT)
    out = np.asarray(out)

    def backward(g):
        if a.requires_grad:
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a.accumulate_grad(np.broadcast_to(gg, a.shape).astype(np.float32))

    return make_op(out, "sum", (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    if a.size == 0:
        raise ShapeError("mean of empty tensor")
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(_tensor.FLOAT)
    out = np.asarray(out)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])

    def backward(g):
        if a.requires_grad:
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a.accumulate_grad((np.broadcast_to(gg, a.shape) / np.float32(n)).astype(np.float32))

    return make_op(out, "mean", (a,), backward)


def avg_downsample2(a):
    """Average-pool 2x2 over the last two axes; odd trailing row/col cropped."""
    a = _wrap(a)
    H, W = a.shape[-2], a.shape[-1]
    H2, W2 = H - (H % 2), W - (W % 2)
    x = a.data[..., :H2, :W2]
    lead = x.shape[:-2]
    xs = x.reshape(*lead, H2 // 2, 2, W2 // 2, 2)
    out = xs.mean(axis=(-3, -1), dtype=np.float64).astype(_tensor.FLOAT)

    def backward(g):
        if a.requires_grad:
            full = np.zeros(a.shape, dtype=np.float32)
            gg = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * np.float32(0.25)
            full[..., :H2, :W2] = gg
            a.accumulate_grad(full)

    return make_op(out, "avg_downsample2", (a,), backward)


def grad_x(a):
    """Forward difference along the last axis, dropping the final column."""
    a = _wrap(a)
    out = a.data[..., :, 1:] - a.data[..., :, :-1]

    def backward(g):
        if a.requires_grad:
            full = np.zeros(a.shape, dtype=np.float32)
            full[..., :, 1:] += g
            full[..., :, :-1] -= g
            a.accumulate_grad(full)

    return make_op(out, "grad_x", (a,), backward)


def grad_y(a):
    """Forward difference along the second-to-last axis, dropping the final row."""
    a = _wrap(a)
    out = a.data[..., 1:, :] - a.data[..., :-1, :]

    def backward(g):
        if a.requires_grad:
            full = np.zeros(a.shape, dtype=np.float32)
            full[..., 1:, :] += g
            full[..., :-1, :] -= g
            a.accumulate_grad(full)

    return make_op(out, "grad_y", (a,), backward)


# -- shape manipulation -------------------------------------------------------

def reshape(a, shape):
    a = _wrap(a)
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return make_op(np.ascontiguousarray(out), "reshape", (a,), backward)


def transpose2d(a):
    a = _wrap(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose2d expects a matrix, got {a.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.ascontiguousarray(g.T))

    return make_op(np.ascontiguousarray(a.data.T), "transpose2d", (a,), backward)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(np.ascontiguousarray(g[tuple(idx)]))

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_op(out, "concat", tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]

    def backward(g):
        gs = np.moveaxis(g, axis, 0)
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate_grad(np.ascontiguousarray(gs[i]))

    out = np.stack([t.data for t in tensors], axis=axis)
    return make_op(out, "stack", tuple(tensors), backward)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    """Matrix product; supports [m,k]@[k,n], [m,k]@[k], [k]@[k,n] and [k]@[k]."""
    a, b = _wrap(a), _wrap(b)
    ad = a.data.astype(np.float64)
    bd = b.data.astype(np.float64)
    out = (ad @ bd).astype(_tensor.FLOAT)

    def backward(g):
        gd = g.astype(np.float64)
        if a.requires_grad:
            if a.ndim == 1 and b.ndim == 1:
                ga = gd * bd
            elif b.ndim == 1:
                ga = np.outer(gd, bd)
            else:
                ga = (gd @ bd.T).reshape(a.shape)
            a.accumulate_grad(ga.astype(np.float32))
        if b.requires_grad:
            if a.ndim == 1 and b.ndim == 1:
                gb = gd * ad
            elif a.ndim == 1:
                gb = np.outer(ad, gd)
            else:
                gb = (ad.T @ gd).reshape(b.shape)
            b.accumulate_grad(gb.astype(np.float32))

    return make_op(np.asarray(out), "matmul", (a, b), backward)


# -- convolution ---------------------------------------------------------------

def _im2col(xpad, kh, kw, stride, Ho, Wo):
    # xpad [N,C,Hp,Wp] -> col [C*kh*kw, N*Ho*Wo]
    N, C, Hp, Wp = xpad.shape
    s0, s1, s2, s3 = xpad.strides
    shape = (N, C, kh, kw, Ho, Wo)
    strides = (s0, s1, s2, s3, s2 * stride, s3 * stride)
    windows = np.lib.stride_tricks.as_strided(xpad, shape=shape, strides=strides)
    col = windows.transpose(1, 2, 3, 0, 4, 5).reshape(C * kh * kw, N * Ho * Wo)
    return np.ascontiguousarray(col)


def conv2d(x, w, stride=1, padding=0):
    """Cross-correlation of x [C,H,W] or [N,C,H,W] with w [K,C,kh,kw].

    Supports kernels 1 and 3, strides 1 and 2, zero padding.  GEMMs run
    in the working dtype: dot lengths stay under a few hundred, where
    single-precision accumulation error is orders below training noise,
    and the BLAS partitioning is fixed so results are reproducible.
    """
    x, w = _wrap(x), _wrap(w)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    N, C, H, W = xd.shape
    K, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d: input has {C} channels, weights expect {Cw}")
    if kh not in (1, 3) or kw not in (1, 3):
        raise ShapeError(f"conv2d: kernel {kh}x{kw} unsupported (use 1 or 3)")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride {stride} unsupported (use 1 or 2)")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError("conv2d: output would be empty")
    if padding:
        xpad = np.zeros((N, C, H + 2 * padding, W + 2 * padding), dtype=_tensor.FLOAT)
        xpad[:, :, padding:padding + H, padding:padding + W] = xd
    else:
        xpad = xd
    col = _im2col(xpad, kh, kw, stride, Ho, Wo)
    w2 = np.ascontiguousarray(w.data.reshape(K, C * kh * kw))
    out = (w2 @ col).reshape(K, N, Ho, Wo).transpose(1, 0, 2, 3).astype(_tensor.FLOAT)

    def backward(g):
        gd = np.ascontiguousarray(
            (g[None] if squeeze else g).transpose(1, 0, 2, 3).reshape(K, N * Ho * Wo))
        if w.requires_grad:
            gw = (gd @ col.T).reshape(K, C, kh, kw)
            w.accumulate_grad(np.ascontiguousarray(gw.astype(np.float32)))
        if x.requires_grad:
            gcol = np.ascontiguousarray(w2.T @ gd)
            gpad = np.zeros(xpad.shape, dtype=np.float32)
            kernels.col2im_add(gcol, N, C, kh, kw, xpad.shape[2], xpad.shape[3],
                               Ho, Wo, stride, gpad)
            gx = gpad[:, :, padding:padding + H, padding:padding + W] if padding else gpad
            x.accumulate_grad(np.ascontiguousarray(gx[0] if squeeze else gx))

    result = out[0] if squeeze else out
    return make_op(np.ascontiguousarray(result), "conv2d", (x, w), backward)


# -- warping -------------------------------------------------------------------

def bilinear_sample(src, grid):
    """Sample src [C,H,W] at grid [Ho,Wo,2] continuous (x, y) pixel coords.

    Returns (samples [C,Ho,Wo], validity [Ho,Wo]).  Out-of-bounds samples
    are 0 with validity 0.  Differentiable w.r.t. src only; grids carry
    no gradients (they are never learned).
    """
    src = _wrap(src)
    grid = np.asarray(grid, dtype=_tensor.FLOAT)
    if grid.ndim != 3 or grid.shape[-1] != 2:
        raise ShapeError(f"grid must be [H,W,2], got {grid.shape}")
    Ho, Wo = grid.shape[:2]
    C = src.shape[0]
    xs = np.ascontiguousarray(grid[..., 0].reshape(-1))
    ys = np.ascontiguousarray(grid[..., 1].reshape(-1))
    out = np.empty((C, Ho * Wo), dtype=_tensor.FLOAT)
    valid = np.empty(Ho * Wo, dtype=_tensor.FLOAT)
    kernels.bilinear_gather(src.data, xs, ys, out, valid)

    def backward(g):
        if src.requires_grad:
            gs = np.zeros(src.shape, dtype=np.float32)
            kernels.bilinear_scatter(np.ascontiguousarray(g.reshape(C, -1)), xs, ys, gs)
            src.accumulate_grad(gs)

    samples = make_op(np.ascontiguousarray(out.reshape(C, Ho, Wo)), "bilinear_sample",
                      (src,), backward)
    return samples, valid.reshape(Ho, Wo)


def warp_stack(src, homographies, out_hw, offset=(0, 0)):
    """Inverse-warp every plane of src [D,C,H,W] into a target window.

    ``homographies`` is [D,3,3] mapping target pixels -> source pixels;
    ``out_hw`` the (Ho, Wo) window size and ``offset`` its (ox, oy)
    origin in target pixel coordinates.  Returns (warped [D,C,Ho,Wo],
    validity [D,1,Ho,Wo]).  Gradients flow to src.
    """
    src = _wrap(src)
    D, C = src.shape[0], src.shape[1]
    Ho, Wo = out_hw
    ox, oy = offset
    hs = np.ascontiguousarray(np.asarray(homographies, dtype=_tensor.FLOAT).reshape(D, 9))
    xs = np.empty((D, Ho * Wo), dtype=_tensor.FLOAT)
    ys = np.empty((D, Ho * Wo), dtype=_tensor.FLOAT)
    out = np.empty((D, C, Ho * Wo), dtype=_tensor.FLOAT)
    valid = np.empty((D, Ho * Wo), dtype=_tensor.FLOAT)
    for d in range(D):
        kernels.fill_grid(hs[d], ox, oy, Ho, Wo, xs[d], ys[d])
        kernels.bilinear_gather(src.data[d], xs[d], ys[d], out[d], valid[d])

    def backward(g):
        if src.requires_grad:
            gs = np.zeros(src.shape, dtype=np.float32)
            gflat = g.reshape(D, C, -1)
            for d in range(D):
                kernels.bilinear_scatter(np.ascontiguousarray(gflat[d]), xs[d], ys[d], gs[d])
            src.accumulate_grad(gs)

    warped = make_op(np.ascontiguousarray(out.reshape(D, C, Ho, Wo)), "warp_stack",
                     (src,), backward)
    return warped, valid.reshape(D, 1, Ho, Wo)
