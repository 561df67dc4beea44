"""Minimal reverse-mode autodiff over dense float32 arrays.

Tensors wrap numpy arrays and record the ops applied to them; ``backward``
replays the tape in reverse topological order. The op set is exactly what
the point-cloud networks and losses in this package need: no general
broadcasting (only the explicit row/column/scalar forms below), no views,
no higher-order gradients.

Shape conventions in gradient comments: x is the input, y the output,
gy the incoming gradient d(loss)/dy.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "GraphError",
    "ShapeError",
    "no_grad",
    "default_dtype",
    "backward",
    "toposort",
    "add",
    "sub",
    "mul",
    "smul",
    "sadd",
    "neg",
    "matmul",
    "add_row",
    "scale_rows",
    "weighted_sum",
    "leaky_relu",
    "relu",
    "exp",
    "log",
    "sqrt",
    "rsqrt",
    "absval",
    "clip",
    "softmax",
    "concat",
    "gather_rows",
    "repeat_rows",
    "reshape",
    "slice_cols",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "sinusoidal_embedding",
    "Adam",
    "adam_step",
]


class GraphError(RuntimeError):
    """Raised on invalid backward calls (non-scalar loss, consumed graph)."""


class ShapeError(ValueError):
    """Raised when operand shapes violate an op contract."""


import threading

_state = threading.local()  # tape mode and default dtype are per-thread


def _grad_on():
    return getattr(_state, "grad", True)


def _dtype():
    return getattr(_state, "dtype", np.float32)


class no_grad:
    """Context manager disabling tape recording (inference fast path).

    Thread-local, so concurrent inference never disturbs a training thread.
    """

    def __enter__(self):
        self._prev = _grad_on()
        _state.grad = False
        return self

    def __exit__(self, *exc):
        _state.grad = self._prev
        return False


class default_dtype:
    """Temporarily change the dtype new tensors default to (float32 normally).

    Ops follow their inputs' dtype, so running a graph under float64 gives a
    high-precision forward for finite-difference oracles. Thread-local.
    """

    def __init__(self, dtype):
        self.dtype = dtype

    def __enter__(self):
        self._prev = _dtype()
        _state.dtype = self.dtype
        return self

    def __exit__(self, *exc):
        _state.dtype = self._prev
        return False


class Tensor:
    """Dense float32 array, optionally tracked by the autodiff tape.

    Leaves are user-created (parameters, inputs, constants); interior nodes
    are op outputs holding a closure that routes gradients to their parents.
    A constant (requires_grad=False leaf) never accumulates gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _dtype())
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions carry the contracts.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else sadd(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else sadd(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else smul(other, self)

    def __rmul__(self, scalar):
        return smul(scalar, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _out(data, parents, backward_fn):
    """Wrap an op result, recording the tape edge when gradients are live."""
    track = _grad_on() and any(p.requires_grad for p in parents)
    t = Tensor(data, requires_grad=track, dtype=data.dtype)
    if track:
        t._parents = tuple(parents)
        t._backward = backward_fn
    return t


def _accum(t, g):
    if t.requires_grad:
        if t.grad is None:
            t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            t.grad += g


def toposort(root):
    """Return the op nodes reachable from root in topological order."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate .grad on every requires_grad tensor reachable from loss.

    loss must be scalar. A graph may be walked once: a second backward
    through any of the same interior nodes raises GraphError rather than
    silently accumulating.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = toposort(loss)
    for node in order:
        if node._consumed:
            raise GraphError("backward called twice through the same graph")
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node._consumed = True


# ---------------------------------------------------------------------------
# elementwise / scalar ops


def add(a, b):
    """Elementwise sum; shapes must match exactly."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")

    def bw(gy):
        _accum(a, gy)
        _accum(b, gy)

    return _out(a.data + b.data, (a, b), bw)


def sub(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes differ: {a.data.shape} vs {b.data.shape}")

    def bw(gy):
        _accum(a, gy)
        _accum(b, -gy)

    return _out(a.data - b.data, (a, b), bw)


def mul(a, b):
    """Elementwise product; shapes must match exactly."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")

    def bw(gy):
        _accum(a, gy * b.data)
        _accum(b, gy * a.data)

    return _out(a.data * b.data, (a, b), bw)


def smul(c, x):
    """Scalar times tensor (the one sanctioned broadcast)."""
    c = float(c)

    def bw(gy):
        _accum(x, gy * c)

    return _out(x.data * np.asarray(c, dtype=x.data.dtype), (x,), bw)


def sadd(x, c):
    c = float(c)

    def bw(gy):
        _accum(x, gy)

    return _out(x.data + np.asarray(c, dtype=x.data.dtype), (x,), bw)


def neg(x):
    def bw(gy):
        _accum(x, -gy)

    return _out(-x.data, (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """2-D matrix product [m,k]x[k,n]. dA = gY.B^T, dB = A^T.gY."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")

    def bw(gy):
        _accum(a, gy @ b.data.T)
        _accum(b, a.data.T @ gy)

    return _out(a.data @ b.data, (a, b), bw)


def add_row(x, b):
    """Add a length-n row vector to every row of [m,n] x."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_row shapes incompatible: {x.data.shape} + {b.data.shape}")

    def bw(gy):
        _accum(x, gy)
        _accum(b, gy.sum(axis=0))

    return _out(x.data + b.data[None, :], (x, b), bw)


def scale_rows(x, s):
    """Multiply row i of [m,n] x by scalar s[i]."""
    if x.data.ndim != 2 or s.data.ndim != 1 or x.data.shape[0] != s.data.shape[0]:
        raise ShapeError(f"scale_rows shapes incompatible: {x.data.shape} * {s.data.shape}")

    def bw(gy):
        _accum(x, gy * s.data[:, None])
        _accum(s, (gy * x.data).sum(axis=1))

    return _out(x.data * s.data[:, None], (x, s), bw)


def weighted_sum(feats, w):
    """Attention pooling: [m,K,D] features x [m,K] weights -> [m,D]."""
    if feats.data.ndim != 3 or w.data.ndim != 2 or feats.data.shape[:2] != w.data.shape:
        raise ShapeError(
            f"weighted_sum shapes incompatible: {feats.data.shape} x {w.data.shape}"
        )

    def bw(gy):
        _accum(feats, w.data[:, :, None] * gy[:, None, :])
        _accum(w, np.einsum("mkd,md->mk", feats.data, gy))

    return _out(np.einsum("mkd,mk->md", feats.data, w.data), (feats, w), bw)


# ---------------------------------------------------------------------------
# nonlinearities


def leaky_relu(x, slope=0.1):
    mask = x.data > 0
    factor = np.where(mask, np.asarray(1.0, x.data.dtype), np.asarray(slope, x.data.dtype))

    def bw(gy):
        _accum(x, gy * factor)

    return _out(x.data * factor, (x,), bw)


def relu(x):
    return leaky_relu(x, 0.0)


def exp(x):
    y = np.exp(x.data)

    def bw(gy):
        _accum(x, gy * y)

    return _out(y, (x,), bw)


def log(x):
    def bw(gy):
        _accum(x, gy / x.data)

    return _out(np.log(x.data), (x,), bw)


def sqrt(x):
    y = np.sqrt(x.data)

    def bw(gy):
        _accum(x, gy * (0.5 / y))

    return _out(y, (x,), bw)


def rsqrt(x):
    y = 1.0 / np.sqrt(x.data)

    def bw(gy):
        _accum(x, gy * (-0.5 * y / x.data))

    return _out(y.astype(x.data.dtype), (x,), bw)


def absval(x):
    sign = np.sign(x.data)

    def bw(gy):
        _accum(x, gy * sign)

    return _out(np.abs(x.data), (x,), bw)


def clip(x, lo, hi):
    """Hard clamp; gradient passes only where lo < x < hi."""
    inside = ((x.data > lo) & (x.data < hi)).astype(x.data.dtype)

    def bw(gy):
        _accum(x, gy * inside)

    return _out(np.clip(x.data, lo, hi), (x,), bw)


def softmax(x, axis=-1):
    """Max-shifted softmax along axis; outputs sum to 1 there."""
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(gy):
        dot = (gy * y).sum(axis=axis, keepdims=True)
        _accum(x, (gy - dot) * y)

    return _out(y, (x,), bw)


# ---------------------------------------------------------------------------
# structural ops


def concat(tensors, axis):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(gy):
        for t, g in zip(tensors, np.split(gy, splits, axis=axis)):
            _accum(t, g)

    return _out(data, tuple(tensors), bw)


def gather_rows(x, idx):
    """Select rows of x by a 1-D integer index array (repeats allowed)."""
    idx = np.asarray(idx)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows needs 1-D indices, got shape {idx.shape}")

    def bw(gy):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, gy)
            _accum(x, gx)

    return _out(x.data[idx], (x,), bw)


def repeat_rows(x, times):
    """Repeat each row `times` consecutive times along axis 0."""

    def bw(gy):
        m = x.data.shape[0]
        _accum(x, gy.reshape((m, times) + x.data.shape[1:]).sum(axis=1))

    return _out(np.repeat(x.data, times, axis=0), (x,), bw)


def reshape(x, shape):
    shape = tuple(shape)

    def bw(gy):
        _accum(x, gy.reshape(x.data.shape))

    return _out(x.data.reshape(shape), (x,), bw)


def slice_cols(x, start, stop):
    """Columns [start:stop) of a 2-D tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"slice_cols needs a 2-D tensor, got shape {x.data.shape}")

    def bw(gy):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = gy
            _accum(x, gx)

    return _out(np.ascontiguousarray(x.data[:, start:stop]), (x,), bw)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x, axis=None):
    def bw(gy):
        if axis is None:
            _accum(x, np.full_like(x.data, gy))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(gy, axis), x.data.shape).copy())

    return _out(x.data.sum(axis=axis), (x,), bw)


def reduce_mean(x, axis=None):
    n = x.data.size if axis is None else x.data.shape[axis]

    def bw(gy):
        g = gy / n
        if axis is None:
            _accum(x, np.full_like(x.data, g))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _out(x.data.mean(axis=axis), (x,), bw)


def reduce_max(x, axis):
    """Max along axis; gradient routes to the first argmax on ties."""
    y = x.data.max(axis=axis)
    amax = x.data.argmax(axis=axis)

    def bw(gy):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            grid = np.indices(amax.shape)
            index = list(grid)
            index.insert(axis if axis >= 0 else x.data.ndim + axis, amax)
            gx[tuple(index)] = gy
            _accum(x, gx)

    return _out(y, (x,), bw)


# ---------------------------------------------------------------------------
# misc


def sinusoidal_embedding(t, dim, max_period=10000.0):
    """Standard sin/cos timestep embedding, shape (len(t), dim). Constant."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2 == 1:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return Tensor(emb.astype(np.float32))


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on `params` arrays.

    state is a dict with keys "t", "m", "v"; pass {} on the first call.
    """
    if not state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if p.shape != g.shape:
            raise ShapeError(f"adam_step shapes differ: param {p.shape} vs grad {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


class Adam:
    """Adam over a list of parameter Tensors; skips params with no grad."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    def step(self):
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params
        ]
        adam_step(
            [p.data for p in self.params],
            grads,
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )

    def zero_grad(self):
        for p in self.params:
            p.grad = None
