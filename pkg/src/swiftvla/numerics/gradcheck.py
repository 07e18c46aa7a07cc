"""Central finite differences, used as an independent oracle for ``backward``."""
from __future__ import annotations

import numpy as np

from .tensor import NumericalFault


def fd_gradient(f, params, h=1e-5, coords=None):
    """Estimate d f / d params by central differences.

    ``f`` is a zero-argument callable returning a float and reading the
    current values of ``params`` (a list of float64 arrays, perturbed in place
    and restored). ``coords`` optionally restricts the estimate to a list of
    ``(param_index, flat_index)`` pairs; the result is then a 1-D array in
    that order, otherwise one array per parameter.
    """
    def evaluate():
        v = float(f())
        if not np.isfinite(v):
            raise NumericalFault("fd_gradient")
        return v

    def partial(arr, k):
        flat = arr.reshape(-1)
        orig = flat[k]
        flat[k] = orig + h
        up = evaluate()
        flat[k] = orig - h
        down = evaluate()
        flat[k] = orig
        return (up - down) / (2.0 * h)

    if coords is not None:
        return np.array([partial(params[i], k) for i, k in coords])
    out = []
    for arr in params:
        g = np.zeros(arr.size)
        for k in range(arr.size):
            g[k] = partial(arr, k)
        out.append(g.reshape(arr.shape))
    return out


def relative_error(a, b, floor=1e-8):
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
