"""Shared test utilities: the finite-difference oracle and error metrics.

The central-difference oracle here is the independent reference every
analytic gradient is checked against; it only ever calls the forward
pass.
"""

import numpy as np

from mpifield.autodiff import Tape, Tensor
from mpifield.autodiff.tensor import precision


def numerical_grad(f, x, h=1e-3):
    """Central finite differences of scalar f at array x, elementwise.

    Evaluations run with the forward pass widened to float64 so the
    difference quotient is free of single-precision rounding noise; the
    analytic float32 gradients are judged against this clean reference.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    with precision(np.float64):
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = np.asarray(f(x)).reshape(()).item()
            flat[i] = orig - h
            fm = np.asarray(f(x)).reshape(()).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return g


def grad_close(analytic, numeric, rel_tol=1e-3, abs_tol=1e-5):
    """Per-element check: relative error < rel_tol, absolute < abs_tol near zero."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = err <= np.maximum(abs_tol, rel_tol * scale)
    worst = float((err / np.maximum(scale, abs_tol)).max())
    return bool(ok.all()), worst


def check_param_grad(build_loss, param_value, h=1e-3, rel_tol=1e-3, abs_tol=1e-5):
    """Compare tape gradients against finite differences for one parameter.

    ``build_loss(param_tensor)`` must construct the scalar loss tensor.
    """
    p = Tensor(np.asarray(param_value, dtype=np.float32), requires_grad=True)
    with Tape([p]) as tape:
        loss = build_loss(p)
        tape.backward(loss)
    analytic = p.grad.copy()

    def f(x):
        q = Tensor(x)
        return build_loss(q).data

    numeric = numerical_grad(f, param_value, h=h)
    ok, worst = grad_close(analytic, numeric, rel_tol=rel_tol, abs_tol=abs_tol)
    return ok, worst, analytic, numeric


def image_psnr(pred, target, mask=None):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
        diff2 = ((pred - target) ** 2)[m]
    else:
        diff2 = (pred - target) ** 2
    mse = diff2.mean()
    if mse < 1e-10:
        return 99.0
    return float(10.0 * np.log10(1.0 / mse))
