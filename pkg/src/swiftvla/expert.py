"""Conditional diffusion action expert with reconstruction heads.

Action tokens alternate cross-attention (into one VLM layer's keys/values)
and self-attention. The latent ``Z_A`` feeds a noise-prediction head and two
reconstruction heads, one per maskable modality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import ModelConfig
from .fusion import FusionState, MaskMode
from .nn import Params, attend, layer_norm, linear, mlp, self_attention
from .numerics import ContractError, DiffTensor, NumericalFault, no_grad, ops


def cosine_alpha_bar(n_steps: int, s: float = 0.008) -> np.ndarray:
    """Cumulative signal fraction for steps 0..n_steps-1, strictly decreasing in (0, 1).

    The curve is sampled at t = (i + 1) / (n_steps + 1) so the noisiest step
    keeps a little signal; at alpha_bar ~ 1e-4 the first sampler step would
    turn any noise-prediction error into a random x0 estimate.
    """
    t = (np.arange(n_steps) + 1) / (n_steps + 1)
    f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2 / math.cos(s / (1 + s) * math.pi / 2) ** 2
    return np.clip(f, 1e-4, 1.0 - 1e-4)


@dataclass
class DiffusionStep:
    index: np.ndarray  # (B,) step indices
    alpha_bar: np.ndarray  # (B,)
    noise: np.ndarray  # (B, chunk, action_dim)


def noise_actions(actions: np.ndarray, step: DiffusionStep) -> np.ndarray:
    ab = step.alpha_bar[:, None, None]
    return np.sqrt(ab) * actions + np.sqrt(1.0 - ab) * step.noise


def sample_step(rng: np.random.Generator, batch: int, cfg: ModelConfig) -> DiffusionStep:
    ab = cosine_alpha_bar(cfg.diffusion_steps)
    idx = rng.integers(0, cfg.diffusion_steps, size=batch)
    eps = rng.standard_normal((batch, cfg.chunk, cfg.action_dim))
    return DiffusionStep(idx, ab[idx], eps)


def init_expert(p: Params, cfg: ModelConfig):
    d = cfg.d_model
    p.dense("expert.in", cfg.action_dim, d)
    p.table("expert.time", cfg.diffusion_steps, d, std=0.5)
    p.table("expert.pos", cfg.chunk, d, std=0.5)
    for i in range(cfg.expert_layers):
        b = f"expert.{i}"
        p.norm(f"{b}.ln_x", d)
        p.attention(f"{b}.xattn", d, kv=False)
        p.norm(f"{b}.ln_s", d)
        p.attention(f"{b}.sattn", d)
        p.norm(f"{b}.ln_m", d)
        p.mlp(f"{b}.mlp", d)
    p.norm("expert.final", d)
    p.dense("expert.h_action", d, cfg.action_dim)
    if cfg.use_4d:
        p.dense("expert.h_4d", d, cfg.n_4d * cfg.d_geo, scale=0.5)
    p.dense("expert.h_2d", d, cfg.n_2d * cfg.d_model, scale=0.5)


def layer_map(cfg: ModelConfig) -> list[int]:
    """Expert layer i (0-based) reads VLM layer ceil((i+1) * N / L_e) (1-based)."""
    return [math.ceil((i + 1) * cfg.n_layers / cfg.expert_layers) - 1 for i in range(cfg.expert_layers)]


def expert_forward(noised, step_index, cond: FusionState, p, cfg: ModelConfig) -> DiffTensor:
    """Z_A (B, chunk, d) for noised action chunks at the given diffusion step indices."""
    if len(cond.kv) < cfg.n_layers:
        raise ContractError(f"conditioning has {len(cond.kv)} layers, expected {cfg.n_layers}")
    noised = noised if isinstance(noised, DiffTensor) else DiffTensor(noised)
    b = noised.shape[0]
    step_index = np.broadcast_to(np.asarray(step_index, dtype=np.int64), (b,))
    x = linear(noised, p, "expert.in")
    x = x + ops.embedding(p["expert.time"], step_index).reshape(b, 1, cfg.d_model) + p["expert.pos"]
    vis = cond.key_visible[:, None, None, :]
    for i, layer in enumerate(layer_map(cfg)):
        blk = f"expert.{i}"
        k, v = cond.kv[layer]
        x = x + attend(layer_norm(x, p, f"{blk}.ln_x"), k, v, p, f"{blk}.xattn", cfg.n_heads, vis)
        a, _ = self_attention(layer_norm(x, p, f"{blk}.ln_s"), p, f"{blk}.sattn", cfg.n_heads)
        x = x + a
        x = x + mlp(layer_norm(x, p, f"{blk}.ln_m"), p, f"{blk}.mlp")
    return layer_norm(x, p, "expert.final")


def repeat_condition(cond: FusionState, m: int) -> FusionState:
    """Conditioning tiled ``m`` times along the batch, for several noise draws per observation."""
    if m == 1:
        return cond
    idx = np.tile(np.arange(cond.key_visible.shape[0]), m)
    kv = [(ops.index(k, idx), ops.index(v, idx)) for k, v in cond.kv]
    return replace(cond, kv=kv, key_visible=cond.key_visible[idx])


def predict_noise(z_a: DiffTensor, p, noised, alpha_bar) -> DiffTensor:
    """Noise estimate for ``noised`` at signal fraction ``alpha_bar`` (scalar or per element).

    The head emits a clean-chunk estimate and the noise is read off the
    forward process, so at high noise the network need not reproduce its
    own input and the conditioning carries over between steps.
    """
    x0_hat = linear(z_a, p, "expert.h_action")
    ab = np.broadcast_to(np.asarray(alpha_bar, dtype=np.float64).reshape(-1, 1, 1), (x0_hat.shape[0], 1, 1))
    xt = noised.data if isinstance(noised, DiffTensor) else np.asarray(noised, dtype=np.float64)
    return DiffTensor(xt / np.sqrt(1.0 - ab)) - x0_hat * np.sqrt(ab / (1.0 - ab))


def snr_weight(alpha_bar, n_steps: int) -> np.ndarray:
    """Per-element loss weight 1/SNR, normalized to mean 1 over a uniformly drawn step."""
    inv = lambda ab: (1.0 - ab) / ab  # noqa: E731
    return inv(np.asarray(alpha_bar, dtype=np.float64)) / inv(cosine_alpha_bar(n_steps)).mean()


def action_loss(eps_hat: DiffTensor, eps, weight=None) -> DiffTensor:
    """Mean squared noise error; ``weight`` (B,) rescales each element's share."""
    if weight is None:
        return ops.mse(eps_hat, DiffTensor(eps))
    w = np.broadcast_to(np.asarray(weight, dtype=np.float64).reshape(-1, 1, 1), eps_hat.shape)
    return ops.mean(ops.square(eps_hat - DiffTensor(eps)) * DiffTensor(np.ascontiguousarray(w)))


def reconstruct(z_a: DiffTensor, p, cfg: ModelConfig, modality: str) -> DiffTensor:
    """Decode the flattened feature block of ``modality`` ('2d' or '4d') from mean-pooled Z_A."""
    if modality not in ("2d", "4d"):
        raise ContractError(f"unknown modality {modality!r}")
    if modality == "4d" and not cfg.use_4d:
        raise ContractError("model configured without 4D input")
    return linear(ops.mean(z_a, axis=1), p, f"expert.h_{modality}")


def reconstruction_losses(z_a: DiffTensor, mask_modes, targets: dict, p, cfg: ModelConfig):
    """(L_2D, L_4D): batch-mean of ||F_hat - F||_2 over elements whose modality was masked.

    Targets are plain arrays, so no gradient reaches the feature extractors.
    Returns python 0.0 for a modality that is masked nowhere in the batch.
    """
    modes = np.asarray(mask_modes)
    b = z_a.shape[0]
    out = []
    for modality, mode in (("2d", MaskMode.MASK2D), ("4d", MaskMode.MASK4D)):
        sel = modes == mode
        if not sel.any():
            out.append(0.0)
            continue
        target = np.asarray(targets[modality], dtype=np.float64).reshape(b, -1)
        pred = reconstruct(z_a, p, cfg, modality)
        norms = ops.l2_norm(pred - DiffTensor(target), axis=-1)
        out.append(ops.sum(norms * DiffTensor(sel.astype(np.float64))) * (1.0 / b))
    return tuple(out)


def recon_head_for(mode: MaskMode) -> str:
    """The only head evaluated under a given mask mode."""
    if mode == MaskMode.MASK2D:
        return "2d"
    if mode == MaskMode.MASK4D:
        return "4d"
    raise ContractError("no reconstruction head is evaluated when nothing is masked")


def sample_actions(cond: FusionState, p, cfg: ModelConfig, rng: np.random.Generator | None = None,
                   n_steps: int | None = None, noise: np.ndarray | None = None) -> np.ndarray:
    """Deterministic DDIM-style denoising from Gaussian noise.

    ``n_steps=0`` returns the initial noise untouched; otherwise the result
    is clamped to [-1, 1].
    """
    n_steps = cfg.sampler_steps if n_steps is None else n_steps
    b = cond.z.shape[0]
    if noise is None:
        noise = (rng or np.random.default_rng(0)).standard_normal((b, cfg.chunk, cfg.action_dim))
    x = np.array(noise, dtype=np.float64)
    if n_steps == 0:
        return x
    ab = cosine_alpha_bar(cfg.diffusion_steps)
    steps = np.unique(np.linspace(cfg.diffusion_steps - 1, 0, n_steps).round().astype(int))[::-1]
    with no_grad():
        for j, s in enumerate(steps):
            eps_hat = predict_noise(expert_forward(x, s, cond, p, cfg), p, x, ab[s]).data
            x0 = np.clip((x - math.sqrt(1.0 - ab[s]) * eps_hat) / math.sqrt(ab[s]), -1.0, 1.0)
            if j + 1 < len(steps):
                prev = ab[steps[j + 1]]
                x = math.sqrt(prev) * x0 + math.sqrt(1.0 - prev) * eps_hat
            else:
                x = x0
            if not np.all(np.isfinite(x)):
                raise NumericalFault("sample_actions")
    return np.clip(x, -1.0, 1.0)
