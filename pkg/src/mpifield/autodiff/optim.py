"""Adam with bias correction, the only optimizer the trainers use."""

from __future__ import annotations

import numpy as np

from ..errors import DivergenceError, ShapeError


class AdamState:
    """First/second moment buffers plus a shared step counter."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros(p.data.shape, dtype=np.float32) for p in params]
        self.v = [np.zeros(p.data.shape, dtype=np.float32) for p in params]


def adam_step(params, state, lr):
    """One bias-corrected Adam update, in place.

    Parameters with a missing gradient are treated as zero-gradient.
    Raises :class:`DivergenceError` if any parameter goes non-finite,
    naming the parameter so training aborts with a usable diagnostic.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = p.grad
        if g is None:
            g = np.zeros(p.data.shape, dtype=np.float32)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m = state.m[i]
        v = state.v[i]
        # non-finite inputs surface via the post-step check, not a warning
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
            p.data -= update
        if not np.all(np.isfinite(p.data)):
            raise DivergenceError(
                f"non-finite values in parameter '{p.op}' after step {t}")


class Adam:
    """Convenience wrapper pairing a parameter list with its state."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState(self.params, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, zero_grad=True):
        adam_step(self.params, self.state, self.lr)
        if zero_grad:
            for p in self.params:
                p.zero_grad()
