"""Reverse-mode automatic differentiation over float64 numpy arrays.

Small op set sized for the pose network and its losses: broadcast add/mul,
matmul, reshape/transpose/slice/concat, relu, same-padding conv2d, bilinear
2x upsampling, log-softmax, gather-along-axis and sum. Rank <= 4.
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager

import numpy as np


class AutodiffError(RuntimeError):
    pass


# global switches: no-grad forward passes and tests' NaN checking
_GRAD_ENABLED = [True]
NAN_CHECK = [False]


@contextmanager
def no_grad():
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


# optional trace of discrete decisions (relu sign patterns); the gradient
# checker uses it to detect probes that step across a kink
class _StateTrace:
    def __init__(self):
        self.active = False
        self.hasher = None

    def note(self, arr: np.ndarray):
        if self.active:
            self.hasher.update(np.packbits(arr).tobytes())

    def note_bytes(self, data: bytes):
        if self.active:
            self.hasher.update(data)


STATE_TRACE = _StateTrace()


@contextmanager
def trace_states():
    """Collect a fingerprint of every discrete branch taken during the block."""
    STATE_TRACE.active = True
    STATE_TRACE.hasher = hashlib.blake2b(digest_size=16)
    try:
        yield STATE_TRACE
    finally:
        STATE_TRACE.active = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "name")

    def __init__(self, data, requires_grad=False, parents=(), name=None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 4:
            raise AutodiffError(f"rank {self.data.ndim} exceeds 4")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents   # tuple of (Tensor, grad_fn)
        self.name = name
        if NAN_CHECK[0] and not np.all(np.isfinite(self.data)):
            raise AutodiffError(f"non-finite values in tensor {name or ''}")

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise AutodiffError("backward() requires a scalar loss")
        if not self._parents and not self.requires_grad:
            raise AutodiffError("backward() on a tensor with no recorded graph")
        order = []
        seen = set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p, _ in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        grads = {id(self): np.ones_like(self.data)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t.accumulate(g)
            for p, fn in t._parents:
                pg = fn(g)
                if id(p) in grads:
                    grads[id(p)] += pg
                else:
                    grads[id(p)] = pg

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"


def _make(data, parents, name=None):
    if grad_enabled() and parents:
        live = tuple((p, fn) for p, fn in parents
                     if p.requires_grad or p._parents)
        return Tensor(data, parents=live, name=name)
    return Tensor(data, name=name)


def constant(data, name=None) -> Tensor:
    return Tensor(data, name=name)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _make(out, ((a, lambda g: _unbroadcast(g, a.data.shape)),
                       (b, lambda g: _unbroadcast(g, b.data.shape))))


def mul(a: Tensor, b) -> Tensor:
    """Multiply by a tensor, array or scalar (arrays/scalars are constants)."""
    if isinstance(b, Tensor):
        out = a.data * b.data
        return _make(out, ((a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
                           (b, lambda g: _unbroadcast(g * a.data, b.data.shape))))
    bb = np.asarray(b, dtype=np.float64)
    return _make(a.data * bb, ((a, lambda g: _unbroadcast(g * bb, a.data.shape)),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data
    return _make(out, ((a, lambda g: g @ b.data.T),
                       (b, lambda g: a.data.T @ g)))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _make(a.data.reshape(shape), ((a, lambda g: g.reshape(old)),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), ((a, lambda g: g.transpose(inv)),))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def back(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return full

    return _make(a.data[sl], ((a, back),))


def concat(tensors, axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for t, o, s in zip(tensors, offsets[:-1], sizes):
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(int(o), int(o + s))
        parents.append((t, (lambda sl: lambda g: g[tuple(sl)])(tuple(sl))))
    return _make(data, tuple(parents))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    STATE_TRACE.note(pos)
    return _make(np.where(pos, a.data, 0.0), ((a, lambda g: g * pos),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def back(g):
        return g - np.exp(out) * g.sum(axis=axis, keepdims=True)

    return _make(out, ((a, back),))


def gather(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """take_along_axis with integer indices (constant); keeps dims."""
    idx = np.asarray(indices, dtype=np.int64)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g, axis=axis)
        return full

    return _make(out, ((a, back),))


def tsum(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _make(np.asarray(a.data.sum()), ((a, lambda g: np.broadcast_to(g, shape).copy()),))


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Same-padding 2D convolution on a single (Cin, H, W) sample."""
    cin, H, W = x.data.shape
    cout, cin_w, k, _ = w.data.shape
    if cin != cin_w:
        raise AutodiffError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    p = k // 2
    Ho = (H + 2 * p - k) // stride + 1
    Wo = (W + 2 * p - k) // stride + 1
    xp = np.zeros((cin, H + 2 * p, W + 2 * p))
    xp[:, p:p + H, p:p + W] = x.data
    patches = np.empty((cin, k, k, Ho, Wo))
    for ki in range(k):
        for kj in range(k):
            patches[:, ki, kj] = xp[:, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride]
    cols = patches.reshape(cin * k * k, Ho * Wo)
    w_mat = w.data.reshape(cout, cin * k * k)
    out = (w_mat @ cols + b.data[:, None]).reshape(cout, Ho, Wo)

    def back_x(g):
        g_mat = g.reshape(cout, Ho * Wo)
        dcols = (w_mat.T @ g_mat).reshape(cin, k, k, Ho, Wo)
        dxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                dxp[:, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += dcols[:, ki, kj]
        return dxp[:, p:p + H, p:p + W]

    def back_w(g):
        g_mat = g.reshape(cout, Ho * Wo)
        return (g_mat @ cols.T).reshape(w.data.shape)

    def back_b(g):
        return g.sum(axis=(1, 2))

    return _make(out, ((x, back_x), (w, back_w), (b, back_b)))


# cached index/weight tables for the fixed 2x bilinear upsampling
_UP2_CACHE: dict = {}


def _up2_table(n: int):
    if n not in _UP2_CACHE:
        pos = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
        i0 = np.floor(pos).astype(np.int64)
        frac = pos - i0
        i0c = np.clip(i0, 0, n - 1)
        i1c = np.clip(i0 + 1, 0, n - 1)
        _UP2_CACHE[n] = (i0c, i1c, frac)
    return _UP2_CACHE[n]


def upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling of a (C, H, W) tensor, half-pixel convention."""
    c, H, W = x.data.shape
    r0, r1, rf = _up2_table(H)
    c0, c1, cf = _up2_table(W)
    rows = x.data[:, r0, :] * (1 - rf)[None, :, None] + x.data[:, r1, :] * rf[None, :, None]
    out = rows[:, :, c0] * (1 - cf)[None, None, :] + rows[:, :, c1] * cf[None, None, :]

    def back(g):
        drows = np.zeros((c, 2 * H, W))
        np.add.at(drows, (slice(None), slice(None), c0), g * (1 - cf)[None, None, :])
        np.add.at(drows, (slice(None), slice(None), c1), g * cf[None, None, :])
        dx = np.zeros_like(x.data)
        np.add.at(dx, (slice(None), r0, slice(None)), drows * (1 - rf)[None, :, None])
        np.add.at(dx, (slice(None), r1, slice(None)), drows * rf[None, :, None])
        return dx

    return _make(out, ((x, back),))


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalization over a (C, H, W) sample."""
    c, H, W = x.data.shape
    if c % groups:
        raise AutodiffError(f"{c} channels not divisible into {groups} groups")
    xg = x.data.reshape(groups, c // groups, H, W)
    mean = xg.mean(axis=(1, 2, 3), keepdims=True)
    var = xg.var(axis=(1, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(c, H, W)
    out = xhat * gamma.data[:, None, None] + beta.data[:, None, None]
    n = (c // groups) * H * W

    def back_x(g):
        gh = (g * gamma.data[:, None, None]).reshape(groups, c // groups, H, W)
        xh = xhat.reshape(groups, c // groups, H, W)
        sum_g = gh.sum(axis=(1, 2, 3), keepdims=True)
        sum_gx = (gh * xh).sum(axis=(1, 2, 3), keepdims=True)
        dx = inv * (gh - sum_g / n - xh * sum_gx / n)
        return dx.reshape(c, H, W)

    def back_gamma(g):
        return (g * xhat).sum(axis=(1, 2))

    def back_beta(g):
        return g.sum(axis=(1, 2))

    return _make(out, ((x, back_x), (gamma, back_gamma), (beta, back_beta)))
