"""Dense float32 tensors with a reverse-mode gradient tape.

The tape is define-by-run: ops executed while a ``Tape`` is active are
recorded in order, and ``Tape.backward`` replays them strictly in
reverse.  With no active tape, the same ops run forward-only and keep no
graph, which is the inference fast path.

Storage is float32 throughout; reductions accumulate in float64 so the
result does not depend on summation chunking.  Graphs are acyclic by
construction (an op's output is always a fresh node appended after its
parents), which is what makes the reverse sweep exact.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import NumericalError, ShapeError

_TAPE_STACK: list["Tape"] = []

# Storage dtype for tensor data.  float32 in production; tests may widen
# it so finite-difference oracles are free of single-precision noise.
FLOAT = np.float32

# When enabled, every op output is scanned for NaN/Inf and the offending
# op is named in the raised error.  Costs one pass over each result.
CHECK_FINITE = os.environ.get("MPIFIELD_CHECK_FINITE", "") not in ("", "0")


def set_debug_checks(enabled):
    global CHECK_FINITE
    CHECK_FINITE = bool(enabled)


class precision:
    """Context manager switching the forward dtype (tests only)."""

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype).type

    def __enter__(self):
        global FLOAT
        self._saved = FLOAT
        FLOAT = self.dtype
        return self

    def __exit__(self, *exc):
        global FLOAT
        FLOAT = self._saved
        return False


def current_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _as_f32(data):
    arr = np.asarray(data, dtype=FLOAT)
    return np.ascontiguousarray(arr)


class Tensor:
    """A float32 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_f32(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- gradient plumbing ---------------------------------------------------

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(np.broadcast_to(g, self.data.shape), dtype=np.float32)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    # -- operator sugar (defined in ops.py, attached there) -------------------

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def relu(self):
        from . import ops
        return ops.relu(self)

    def sigmoid(self):
        from . import ops
        return ops.sigmoid(self)

    def abs(self):
        from . import ops
        return ops.abs_(self)

    def sqrt(self):
        from . import ops
        return ops.sqrt_(self)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        return ops.reshape(self, shape if len(shape) > 1 else shape[0])


def parameter(data, name=None):
    """A leaf tensor that optimizers may update.  ``name`` aids diagnostics."""
    t = Tensor(data, requires_grad=True)
    t.op = name or "param"
    return t


def constant(data):
    return Tensor(data, requires_grad=False)


def make_op(out_data, op, parents, backward):
    """Create the output node of an op, recording it if a tape is active.

    ``backward`` is called with the output gradient and must accumulate
    into each parent via ``accumulate_grad``.
    """
    if CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise NumericalError(f"non-finite values produced by op '{op}'")
    tape = current_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = out_data if out_data.dtype == FLOAT else out_data.astype(FLOAT)
    out.grad = None
    out.op = op
    if needs:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape._nodes.append(out)
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


class Tape:
    """Ordered op recording plus a registry of watched parameters.

    ``backward`` seeds the loss gradient and replays recorded ops in
    exact reverse order; watched parameters that did not participate in
    the loss receive an explicit zero gradient.  Entering the tape
    zeroes watched gradients unless ``accumulate=True``.
    """

    def __init__(self, params=(), accumulate=False):
        self._nodes = []
        self._params = list(params)
        self._accumulate = accumulate

    def watch(self, *params):
        self._params.extend(params)

    def __enter__(self):
        if not self._accumulate:
            for p in self._params:
                p.zero_grad()
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        if not isinstance(loss, Tensor):
            raise TypeError("loss must be a Tensor")
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        if loss.requires_grad:
            loss.accumulate_grad(np.ones(loss.shape, dtype=np.float32))
            for node in reversed(self._nodes):
                if node.grad is not None and node._backward is not None:
                    node._backward(node.grad)
        for p in self._params:
            if p.grad is None:
                p.grad = np.zeros(p.data.shape, dtype=np.float32)

    def release(self):
        """Drop recorded nodes so intermediate buffers can be collected."""
        for node in self._nodes:
            node._parents = ()
            node._backward = None
        self._nodes.clear()
