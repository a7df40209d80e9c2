"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every operation records its parents and a backward closure on a dynamic
tape. Shapes are explicit (no implicit broadcasting beyond the documented
bias/scalar cases) so shape errors surface at the offending op.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / frozen passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class ShapeError(ValueError):
    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {[tuple(s) for s in shapes]}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self):
        """Reverse-accumulate gradients from this scalar tensor."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # operator sugar (same-shape / scalar only)
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data):
    """Non-trainable tensor (gradient never flows into it)."""
    return Tensor(data, requires_grad=False)


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    out = _make(out_data, (a, b), bwd)
    return out


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)

    def bwd(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(-g)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b):
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return _make(a.data * b.data, (a, b), bwd)


def add_scalar(x, c):
    def bwd(g):
        x._accum(g)

    return _make(x.data + float(c), (x,), bwd)


def mul_scalar(x, c):
    c = float(c)

    def bwd(g):
        x._accum(g * c)

    return _make(x.data * c, (x,), bwd)


def scale_by(x, s):
    """Multiply tensor x by a scalar tensor s (shape () or (1,))."""
    if s.size != 1:
        raise ShapeError("scale_by", x.shape, s.shape)
    sval = float(s.data.reshape(()))

    def bwd(g):
        if x.requires_grad:
            x._accum(g * sval)
        if s.requires_grad:
            s._accum(np.sum(g * x.data).reshape(s.shape))

    return _make(x.data * sval, (x, s), bwd)


def add_bias(x, b):
    """x (..., D) + b (D,), b broadcast over leading axes."""
    if x.shape[-1:] != b.shape:
        raise ShapeError("add_bias", x.shape, b.shape)

    def bwd(g):
        if x.requires_grad:
            x._accum(g)
        if b.requires_grad:
            b._accum(g.reshape(-1, b.shape[0]).sum(axis=0))

    return _make(x.data + b.data, (x, b), bwd)


def add_const(x, arr):
    """Add a constant ndarray (e.g. an attention mask); gradient passes through."""
    arr = np.asarray(arr, dtype=np.float64)
    if x.shape != arr.shape:
        raise ShapeError("add_const", x.shape, arr.shape)

    def bwd(g):
        x._accum(g)

    return _make(x.data + arr, (x,), bwd)


def exp(x):
    out_data = np.exp(x.data)

    def bwd(g):
        x._accum(g * out_data)

    return _make(out_data, (x,), bwd)


def log(x):
    def bwd(g):
        x._accum(g / x.data)

    return _make(np.log(x.data), (x,), bwd)


def pow_scalar(x, p):
    p = float(p)

    def bwd(g):
        x._accum(g * p * np.power(x.data, p - 1.0))

    return _make(np.power(x.data, p), (x,), bwd)


def clamp(x, lo, hi):
    inside = (x.data > lo) & (x.data < hi)

    def bwd(g):
        x._accum(g * inside)

    return _make(np.clip(x.data, lo, hi), (x,), bwd)


def sigmoid(x):
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        x._accum(g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), bwd)


def tanh(x):
    out_data = np.tanh(x.data)

    def bwd(g):
        x._accum(g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), bwd)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    # exact erf form so finite-difference checks stay tight
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        x._accum(g * (cdf + x.data * pdf))

    return _make(x.data * cdf, (x,), bwd)


# ---------------------------------------------------------------------------
# reductions / normalizations
# ---------------------------------------------------------------------------

def sum_all(x):
    def bwd(g):
        x._accum(np.full(x.shape, float(g)))

    return _make(np.sum(x.data), (x,), bwd)


def mean_all(x):
    n = x.size

    def bwd(g):
        x._accum(np.full(x.shape, float(g) / n))

    return _make(np.mean(x.data), (x,), bwd)


def softmax(x, axis=-1):
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = np.sum(g * out_data, axis=axis, keepdims=True)
        x._accum(out_data * (g - dot))

    return _make(out_data, (x,), bwd)


def log_softmax(x, axis=-1):
    m = np.max(x.data, axis=axis, keepdims=True)
    s = x.data - m
    ls = s - np.log(np.exp(s).sum(axis=axis, keepdims=True))

    def bwd(g):
        x._accum(g - np.exp(ls) * g.sum(axis=axis, keepdims=True))

    return _make(ls, (x,), bwd)


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if x.shape[-1:] != gain.shape or gain.shape != bias.shape:
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def bwd(g):
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, gain.shape[0]).sum(axis=0))
        if bias.requires_grad:
            bias._accum(g.reshape(-1, bias.shape[0]).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            mean_gh = gh.mean(axis=-1, keepdims=True)
            mean_ghx = (gh * xhat).mean(axis=-1, keepdims=True)
            x._accum(inv * (gh - mean_gh - xhat * mean_ghx))

    return _make(out_data, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# linear algebra / structure
# ---------------------------------------------------------------------------

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bwd)


def tensordot_last(x, w):
    """Contract the last axis of x (..., J) with w (J, K) -> (..., K)."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError("tensordot_last", x.shape, w.shape)
    J, K = w.shape

    def bwd(g):
        if x.requires_grad:
            x._accum(g @ w.data.T)
        if w.requires_grad:
            w._accum(x.data.reshape(-1, J).T @ g.reshape(-1, K))

    return _make(x.data @ w.data, (x, w), bwd)


def pairwise_add(a, b):
    """a (T, J) + b (U, J) -> (T, U, J), every (t, u) pair summed."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("pairwise_add", a.shape, b.shape)

    def bwd(g):
        if a.requires_grad:
            a._accum(g.sum(axis=1))
        if b.requires_grad:
            b._accum(g.sum(axis=0))

    return _make(a.data[:, None, :] + b.data[None, :, :], (a, b), bwd)


def transpose(x):
    if x.data.ndim != 2:
        raise ShapeError("transpose", x.shape)

    def bwd(g):
        x._accum(g.T)

    return _make(x.data.T, (x,), bwd)


def reshape(x, shape):
    old = x.shape

    def bwd(g):
        x._accum(g.reshape(old))

    return _make(x.data.reshape(shape), (x,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        start = 0
        for t, n in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            if t.requires_grad:
                t._accum(g[tuple(sl)])
            start += n

    return _make(out_data, tensors, bwd)


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError("narrow", x.shape, (axis, start, length))
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bwd(g):
        full = np.zeros(x.shape)
        full[sl] = g
        x._accum(full)

    return _make(x.data[sl], (x,), bwd)


def gather_rows(x, idx):
    """Select rows of x (N, D) by an integer index array (M,)."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeError("gather_rows", x.shape)

    def bwd(g):
        full = np.zeros(x.shape)
        np.add.at(full, idx, g)
        x._accum(full)

    return _make(x.data[idx], (x,), bwd)


def gather(x, idx):
    """Index a 1-D tensor with an arbitrary-shape integer array."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 1:
        raise ShapeError("gather", x.shape)

    def bwd(g):
        full = np.zeros(x.shape)
        np.add.at(full, idx.ravel(), g.ravel())
        x._accum(full)

    return _make(x.data[idx], (x,), bwd)


def custom_op(data, parents, backward):
    """Build a tensor from a hand-written forward value and backward closure."""
    return _make(data, parents, backward)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(f, points, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f maps the point tensors to a scalar Tensor. Relative error per
    coordinate is |analytic - central| / (|analytic| + |central| + 1e-12).
    """
    if isinstance(points, Tensor):
        points = [points]
    for p in points:
        p.requires_grad = True
        p.zero_grad()
    out = f(*points)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("grad_check: non-finite function value")
    out.backward()
    worst = 0.0
    for p in points:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                hi = float(f(*points).data)
                flat[i] = orig - eps
                lo = float(f(*points).data)
                flat[i] = orig
            num = (hi - lo) / (2.0 * eps)
            if not math.isfinite(num):
                raise FloatingPointError("grad_check: non-finite difference")
            a = analytic.ravel()[i]
            rel = abs(a - num) / (abs(a) + abs(num) + 1e-12)
            worst = max(worst, rel)
    return worst
