"""Dense float64 tensors with a reverse-mode tape.

Every op returns a new :class:`DiffTensor`. When any operand requires a
gradient the result records its parents and a backward closure; the tape is
simply the graph reachable from the loss, replayed in decreasing ``tape_id``
order (creation order is always a valid topological order).
"""
from __future__ import annotations

import contextlib
import itertools
import weakref

import numpy as np

_ids = itertools.count(1)
_grad_enabled = True
_ops = None  # the ops module; bound by ops itself, which imports this one


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class NumericalFault(FloatingPointError):
    """An op produced NaN or Inf."""

    def __init__(self, op, detail=""):
        self.op = op
        super().__init__(f"{op}: non-finite values{(' (' + detail + ')') if detail else ''}")


class ContractError(ValueError):
    """A precondition of an engine call was violated."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class MemoryMeter:
    """Tracks live and peak bytes of tensors created while active.

    Only tensors allocated through :class:`DiffTensor` are counted, which makes
    the figure independent of the allocator.
    """

    _active: list["MemoryMeter"] = []

    def __init__(self):
        self.live = 0
        self.peak = 0

    def _add(self, n):
        self.live += n
        self.peak = max(self.peak, self.live)

    def _sub(self, n):
        self.live -= n

    def track(self, arr: np.ndarray):
        """Count an externally held array (e.g. parameters) as live."""
        self._add(arr.nbytes)

    def __enter__(self):
        MemoryMeter._active.append(self)
        return self

    def __exit__(self, *exc):
        MemoryMeter._active.remove(self)


def _account(t: "DiffTensor"):
    if not MemoryMeter._active:
        return
    n = t.data.nbytes
    for m in MemoryMeter._active:
        m._add(n)
        weakref.finalize(t, m._sub, n)


class DiffTensor:
    __slots__ = ("data", "_grad", "requires_grad", "parents", "backward_fn", "tape_id", "op", "name",
                 "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self._grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.backward_fn = None
        self.tape_id = None
        self.op = None
        self.name = name
        _account(self)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        return self.data

    @property
    def grad(self):
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self):
        self._grad = None

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def detach(self):
        return DiffTensor(self.data)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"DiffTensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return _ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _ops.sub(self, other)

    def __rsub__(self, other):
        return _ops.sub(other, self)

    def __mul__(self, other):
        return _ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return _ops.mul(self, -1.0)

    def __matmul__(self, other):
        return _ops.matmul(self, other)

    def __getitem__(self, idx):
        return _ops.index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def transpose(self, *axes):
        return _ops.transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return _ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops.mean(self, axis, keepdims)


def as_tensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def make_node(op, data, parents, backward_fn) -> DiffTensor:
    """Wrap an op result and record it on the tape when needed.

    ``backward_fn(g)`` returns one gradient (or None) per parent.
    """
    if not np.isfinite(data).all():
        raise NumericalFault(op)
    out = DiffTensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.tape_id = next(_ids)
    return out


def backward(loss: DiffTensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf that requires grad."""
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.tape_id is None or t.tape_id in nodes:
            continue
        nodes[t.tape_id] = t
        stack.extend(p for p in t.parents if p.tape_id is not None)
    grads = {loss.tape_id: np.ones((), dtype=np.float64)}
    for tid in sorted(nodes, reverse=True):
        node = nodes[tid]
        g = grads.pop(tid, None)
        if g is None:
            continue
        pgrads = node.backward_fn(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NumericalFault(f"{node.op}.backward")
            if p.tape_id is None:
                p._grad = pg.copy() if p._grad is None else p._grad + pg
            elif p.tape_id in grads:
                grads[p.tape_id] = grads[p.tape_id] + pg
            else:
                grads[p.tape_id] = pg
