"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, DiffTensor


@dataclass
class LrSchedule:
    base_lr: float
    min_lr: float
    warmup_steps: int
    total_steps: int

    def __call__(self, step: int) -> float:
        if step < self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        span = max(self.total_steps - self.warmup_steps, 1)
        frac = min((step - self.warmup_steps) / span, 1.0)
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * frac))


@dataclass
class OptimizerState:
    beta1: float = 0.85
    beta2: float = 0.9
    weight_decay: float = 0.01
    eps: float = 1e-8
    base_lr: float = 1e-3
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def decays(name: str, p: DiffTensor) -> bool:
    """Weight decay applies to matrices only (not gains, biases or 1-D tables)."""
    return p.ndim >= 2


def opt_step(state: OptimizerState, params: dict[str, DiffTensor], lr: float) -> None:
    """One AdamW update of every parameter in ``params`` from its ``.grad``.

    Parameters that received no gradient at all (``_grad is None``) are left
    untouched, weight decay included.
    """
    if lr < 0:
        raise ContractError(f"learning rate must be >= 0, got {lr}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p._grad
        if g is None:
            continue
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        elif m.shape != p.shape:
            raise ContractError(f"moment buffer for {name} has shape {m.shape}, parameter {p.shape}")
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay and decays(name, p):
            update = update + state.weight_decay * p.data
        p.data -= lr * update


def zero_grad(params) -> None:
    for p in (params.values() if isinstance(params, dict) else params):
        p.zero_grad()
