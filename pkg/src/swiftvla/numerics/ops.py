"""Differentiable ops over :class:`DiffTensor`.

Broadcasting is supported only where the model needs it: trailing-axis bias
terms in ``add``/``mul`` and batched ``matmul``.
"""
from __future__ import annotations

import sys

import numpy as np

from . import tensor as _tensor
from .tensor import DiffTensor, ShapeError, as_tensor, make_node


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _bshape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _bshape("add", a, b)
    return make_node("add", a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _bshape("sub", a, b)
    return make_node("sub", a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    """Elementwise product; ``b`` may be a python scalar."""
    a = as_tensor(a)
    if np.isscalar(b):
        c = float(b)
        return make_node("scale", a.data * c, (a,), lambda g: (g * c,))
    b = as_tensor(b)
    _bshape("mul", a, b)
    return make_node("mul", a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_node("matmul", out, (a, b), bw)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return make_node("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = np.argsort(axes)
    return make_node("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def index(a, idx):
    """Basic slicing (``a[idx]``)."""
    a = as_tensor(a)
    out = a.data[idx]

    fancy = _needs_add_at(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return make_node("slice", np.array(out, copy=True), (a,), bw)


def _needs_add_at(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", *[t.shape for t in ts])
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))

    return make_node("concat", np.concatenate([t.data for t in ts], axis=ax), ts, bw)


def embedding(table, ids):
    """Row lookup ``table[ids]`` for an integer id array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu" or (ids.size and (ids.min() < 0 or ids.max() >= table.shape[0])):
        raise ShapeError("embedding", table.shape, ids.shape)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return make_node("embedding", table.data[ids], (table,), bw)


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node("sum", np.asarray(out), (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / float(n))


def softmax(x, visible=None):
    """Softmax over the last axis.

    ``visible`` is a boolean array broadcastable to ``x``; hidden entries get a
    -inf logit and so exactly zero probability. Rows with no visible entry
    produce an all-zero row instead of NaN.
    """
    x = as_tensor(x)
    if visible is None:
        z = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
    else:
        visible = np.asarray(visible, dtype=bool)
        np.broadcast_shapes(visible.shape, x.shape)
        logits = x.data + np.where(visible, 0.0, -np.inf)
        m = logits.max(axis=-1, keepdims=True)
        m[~np.isfinite(m)] = 0.0
        logits -= m
        e = np.exp(logits, out=logits)
        s = e.sum(axis=-1, keepdims=True)
        empty = s == 0
        s[empty] = 1.0
        p = e
        p *= 1.0 / s

    def bw(g):
        return (p * (g - (p * g).sum(axis=-1, keepdims=True)),)

    return make_node("softmax", p, (x,), bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = gg = gb = None
        gh = g * gamma.data
        if x.requires_grad:
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = _unbroadcast(g * xhat, gamma.shape)
        if beta.requires_grad:
            gb = _unbroadcast(g, beta.shape)
        return gx, gg, gb

    return make_node("layer_norm", out, (x, gamma, beta), bw)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _silu_grad(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def silu(x):
    x = as_tensor(x)
    return make_node("silu", x.data * _sigmoid(x.data), (x,), lambda g: (g * _silu_grad(x.data),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def square(x):
    x = as_tensor(x)
    return make_node("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def mse(a, b):
    """Mean of squared differences over all elements."""
    d = sub(a, b)
    return mean(square(d))


def l2_norm(x, axis=-1):
    """Euclidean norm along ``axis``; the gradient at a zero vector is taken as 0."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))

    def bw(g):
        gk = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, gk * x.data / safe, 0.0),)

    return make_node("l2_norm", np.squeeze(n, axis=axis), (x,), bw)


_tensor._ops = sys.modules[__name__]
