"""Small reverse-mode autodiff engine on top of numpy.

Only the operations needed by the network and its objective are provided.
Every op records a closure that maps the output gradient to gradients of its
inputs; :meth:`Tensor.backward` replays them in reverse topological order.

Non-smooth ops (relu, hinge, max-pool, clamp, zero column norms) use the zero
element of the subdifferential at the kink and log their branch pattern while
a :func:`record_kinks` context is active, so finite-difference probes that
straddle a kink can be detected and excluded.
"""
from __future__ import annotations

import contextlib
import hashlib

import numpy as np

from ..errors import DimensionError, UsageError

_grad_enabled = True
_kink_log: list | None = None


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def record_kinks():
    """Collect branch patterns of every non-smooth op evaluated inside."""
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def kink_signature(log) -> str:
    h = hashlib.sha1()
    for arr in log:
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _note_kink(pattern):
    if _kink_log is not None:
        _kink_log.append(np.asarray(pattern))


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """An array with an optional gradient and the op that produced it."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data, parents, backward):
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _lift(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- autodiff -------------------------------------------------------------
    def backward(self, grad=None):
        if not self.requires_grad or (self._backward is None and not self._parents):
            raise UsageError("backward() called on a tensor with no recorded computation; run a forward pass first")
        if grad is None:
            if self.data.size != 1:
                raise UsageError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = self._lift(other)
        a, b = self, other
        return Tensor._make(a.data + b.data, (a, b),
                            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other
        return Tensor._make(a.data * b.data, (a, b),
                            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self, other
        out = a.data / b.data
        return Tensor._make(out, (a, b),
                            lambda g: (_unbroadcast(g / b.data, a.shape),
                                       _unbroadcast(-g * out / b.data, b.shape)))

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, p):
        a = self
        return Tensor._make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self, other

        def back(g):
            if b.ndim == 1:
                ga = np.multiply.outer(g, b.data)
                gb = np.tensordot(g, a.data, axes=(list(range(g.ndim)), list(range(a.ndim - 1))))
                return ga, gb
            ga = g @ np.swapaxes(b.data, -1, -2)
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._make(a.data @ b.data, (a, b), back)

    # -- shape ops ------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        a = self

        def back(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(a.data[idx], (a,), back)

    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise ----------------------------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self):
        out = _stable_sigmoid(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def relu(self):
        mask = self.data > 0
        _note_kink(mask)
        return Tensor._make(self.data * mask, (self,), lambda g: (g * mask,))

    def clip(self, lo, hi):
        mask = (self.data > lo) & (self.data < hi)
        _note_kink(mask)
        return Tensor._make(np.clip(self.data, lo, hi), (self,), lambda g: (g * mask,))


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tensor(data, requires_grad=False, dtype=None, name=None):
    arr = np.array(data, dtype=dtype) if dtype is not None else np.array(data)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def hinge(x: Tensor) -> Tensor:
    """max(x, 0) with derivative 0 at x == 0."""
    return x.relu()


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def stack(tensors, axis=0):
    tensors = list(tensors)

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


def roll(x: Tensor, shift: int, axis: int) -> Tensor:
    return Tensor._make(np.roll(x.data, shift, axis=axis), (x,),
                        lambda g: (np.roll(g, -shift, axis=axis),))


def column_norms(w: Tensor) -> Tensor:
    """L2 norm of each column of a 2-D weight; subgradient 0 at zero columns."""
    if w.ndim != 2:
        raise DimensionError(f"column_norms expects a matrix, got shape {w.shape}")
    norms = np.sqrt((w.data * w.data).sum(axis=0))
    nonzero = norms > 0
    _note_kink(nonzero)
    safe = np.where(nonzero, norms, 1.0)

    def back(g):
        return (w.data * (g * nonzero / safe)[None, :],)

    return Tensor._make(norms, (w,), back)


# -- convolution / pooling / normalization (NHWC layout) ---------------------

def _windows(xp, kh, kw, stride):
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return win[:, ::stride, ::stride]  # (N, Ho, Wo, C, kh, kw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, pad: int = 0) -> Tensor:
    """Stride-1 2-D convolution (cross-correlation).

    ``x`` is (N, H, W, Cin), ``w`` is (kh, kw, Cin, Cout); zero padding.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    ho, wo = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {xp.shape[1:3]}")
    # columns ordered (kh, kw, Cin) to match the kernel layout
    cols = _windows(xp, kh, kw, 1).transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if b is not None:
        out = out + b.data
    out = out.reshape(n, ho, wo, cout)
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            if pad <= kh - 1 and pad <= kw - 1:
                # input gradient = correlation of g with the flipped, channel-swapped kernel
                gp = np.pad(g, ((0, 0), (kh - 1 - pad,) * 2, (kw - 1 - pad,) * 2, (0, 0)))
                gc = _windows(gp, kh, kw, 1)[:, :h, :wd].transpose(0, 1, 2, 4, 5, 3).reshape(n * h * wd, -1)
                wflip = w.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, cin)
                gx = (gc @ wflip).reshape(x.shape)
            else:
                gcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin).transpose(3, 4, 0, 1, 2, 5).copy()
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + ho, j:j + wo, :] += gcols[i, j]
                gx = gxp[:, pad:pad + h, pad:pad + wd, :] if pad else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._make(out, parents, back)


def maxpool2d(x: Tensor, k: int = 5, stride: int = 3, pad: int = 0) -> Tensor:
    """Max pooling over k x k windows; padding cells never win.

    The max is taken separably (rows, then columns). Ties go to the first
    winning column, and within it to the first winning row.
    """
    n, h, wd, c = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)), constant_values=-np.inf) if pad else x.data
    ho = (xp.shape[1] - k) // stride + 1
    wo = (xp.shape[2] - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"maxpool2d: window {k} does not fit padded input {xp.shape[1:3]}")
    rspan, cspan = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    rowmax = xp[:, 0:rspan:stride]
    for i in range(1, k):
        rowmax = np.maximum(rowmax, xp[:, i:i + rspan:stride])
    out = rowmax[:, :, 0:cspan:stride]
    for j in range(1, k):
        out = np.maximum(out, rowmax[:, :, j:j + cspan:stride])

    def winner():
        aj = np.full(out.shape, k - 1, dtype=np.int8)
        for j in range(k - 2, -1, -1):
            aj -= (aj - np.int8(j)) * (rowmax[:, :, j:j + cspan:stride] == out).view(np.int8)
        # row argmax per input column, then read it at the winning column
        ai_full = np.full(rowmax.shape, k - 1, dtype=np.int8)
        for i in range(k - 2, -1, -1):
            ai_full -= (ai_full - np.int8(i)) * (xp[:, i:i + rspan:stride] == rowmax).view(np.int8)
        cols = np.arange(wo)[None, None, :, None] * stride + aj
        ai = np.take_along_axis(ai_full, cols.astype(np.intp), axis=2)
        return ai.astype(np.int64), aj.astype(np.int64)

    if _kink_log is not None:
        ai, aj = winner()
        _note_kink(ai * k + aj)

    def back(g):
        # scatter each output gradient to the flat position of its window's argmax
        hp, wp = xp.shape[1], xp.shape[2]
        ai, aj = winner()
        rows = np.arange(ho)[None, :, None, None] * stride + ai
        cols = np.arange(wo)[None, None, :, None] * stride + aj
        flat = ((np.arange(n)[:, None, None, None] * hp + rows) * wp + cols) * c + np.arange(c)
        gxp = np.bincount(flat.ravel(), weights=g.ravel(), minlength=xp.size)
        gxp = gxp.reshape(xp.shape).astype(x.dtype, copy=False)
        return (gxp[:, pad:pad + h, pad:pad + wd, :] if pad else gxp,)

    return Tensor._make(np.ascontiguousarray(out), (x,), back)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
              train: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over every axis but the last.

    In training mode the running statistics (numpy arrays) are updated in
    place; in eval mode they are used instead of batch statistics.
    """
    c = x.shape[-1]
    x2 = x.data.reshape(-1, c)
    m = x2.shape[0]
    ones = np.ones(m, dtype=x.dtype)
    if train:
        mu = ones @ x2 / m
        centered = x2 - mu
        var = ones @ (centered * centered) / m
        if running_mean is not None:
            running_mean *= momentum
            running_mean += (1 - momentum) * mu
            running_var *= momentum
            running_var += (1 - momentum) * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
        centered = x2 - mu
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv
    out = (xhat * gamma.data + beta.data).astype(x.dtype, copy=False)

    def back(g):
        g2 = g.reshape(-1, c)
        ggamma = ones @ (g2 * xhat)
        gbeta = ones @ g2
        if train:
            gx = (g2 - (gbeta + xhat * ggamma) / m) * (gamma.data * inv)
        else:
            gx = g2 * (gamma.data * inv)
        return gx.reshape(x.shape).astype(x.dtype, copy=False), ggamma, gbeta

    return Tensor._make(out.reshape(x.shape), (x, gamma, beta), back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity in eval mode."""
    if not train or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
    return x * mask
