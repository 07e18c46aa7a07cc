"""Parameter store and the transformer building blocks shared by every model part."""
from __future__ import annotations

import math

import numpy as np

from .numerics import DiffTensor, ops


class Params(dict):
    """Flat ``name -> DiffTensor`` mapping with seeded initializers."""

    def __init__(self, rng: np.random.Generator | None = None, trainable=True):
        super().__init__()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.trainable = trainable

    def _new(self, name, arr):
        if name in self:
            raise KeyError(f"duplicate parameter {name}")
        self[name] = DiffTensor(arr, requires_grad=self.trainable, name=name)
        return self[name]

    def dense(self, name, n_in, n_out, bias=True, scale=1.0):
        self._new(name + ".w", self.rng.normal(0.0, scale / math.sqrt(n_in), (n_in, n_out)))
        if bias:
            self._new(name + ".b", np.zeros(n_out))

    def table(self, name, *shape, std=0.02):
        self._new(name, self.rng.normal(0.0, std, shape))

    def norm(self, name, d):
        self._new(name + ".g", np.ones(d))
        self._new(name + ".b", np.zeros(d))

    def attention(self, name, d, kv=True):
        self.dense(name + ".q", d, d)
        if kv:
            self.dense(name + ".k", d, d)
            self.dense(name + ".v", d, d)
        self.dense(name + ".o", d, d, bias=False, scale=0.5)

    def mlp(self, name, d, mult=2):
        self.dense(name + ".fc1", d, mult * d)
        self.dense(name + ".fc2", mult * d, d, scale=0.5)

    def count(self, prefix=""):
        return int(sum(p.size for k, p in self.items() if k.startswith(prefix)))

    def subset(self, *prefixes):
        return {k: v for k, v in self.items() if k.startswith(prefixes)}


def linear(x, p, name):
    y = x @ p[name + ".w"]
    b = p.get(name + ".b")
    return y if b is None else y + b


def layer_norm(x, p, name):
    return ops.layer_norm(x, p[name + ".g"], p[name + ".b"])


def mlp(x, p, name):
    return linear(ops.silu(linear(x, p, name + ".fc1")), p, name + ".fc2")


def split_heads(x, n_heads):
    b, n, d = x.shape
    return ops.transpose(x.reshape(b, n, n_heads, d // n_heads), (0, 2, 1, 3))


def merge_heads(x):
    b, h, n, dh = x.shape
    return ops.transpose(x, (0, 2, 1, 3)).reshape(b, n, h * dh)


def project_kv(x, p, name, n_heads):
    return split_heads(linear(x, p, name + ".k"), n_heads), split_heads(linear(x, p, name + ".v"), n_heads)


def attend(xq, k, v, p, name, n_heads, visible=None):
    """Multi-head attention of ``xq`` (B, nq, d) over head-split keys/values.

    ``visible`` is a boolean array broadcastable to (B, 1, nq, nk); queries
    with no visible key produce a zero output row.
    """
    q = split_heads(linear(xq, p, name + ".q"), n_heads)
    scores = (q @ ops.swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))
    probs = ops.softmax(scores, visible)
    return linear(merge_heads(probs @ v), p, name + ".o")


def self_attention(x, p, name, n_heads, visible=None):
    k, v = project_kv(x, p, name, n_heads)
    return attend(x, k, v, p, name, n_heads, visible), (k, v)
