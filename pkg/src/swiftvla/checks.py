"""Finite-difference gradient checks of the three learned or learnable model parts.

Each module gets a small fixed problem whose scalar loss touches every
parameter, and a random sample of parameter coordinates is compared against
central differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expert as ex
from .config import ModelConfig
from .fusion import MaskMode, assemble_sequence, build_mask, traj_head, traj_loss, vlm_forward
from .geo4d import decode_step, encode_frame_batch, init_geo4d
from .numerics import DiffTensor, backward, fd_gradient, no_grad, ops, relative_error
from .percept2d import encode_views
from .policy import Policy

GRAD_MODULES = ("vlm", "expert", "geo4d")
# relative error is measured against max(|analytic|, |numeric|, FLOOR) so that
# coordinates with vanishing gradients are judged on absolute error instead
FLOOR = 1e-3


@dataclass
class GradcheckReport:
    module: str
    n_params: int
    max_rel_err: float
    n_fail: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.n_fail == 0


def _small_cfg() -> ModelConfig:
    return ModelConfig(n_layers=2, expert_layers=2, geo_blocks=1)


def _problem(module: str, seed: int):
    """Return (params dict, loss closure) for ``module``."""
    cfg = _small_cfg()
    rng = np.random.default_rng(seed)
    b = 3
    modes = np.array([MaskMode.NONE, MaskMode.MASK2D, MaskMode.MASK4D])
    images = rng.uniform(0, 1, (b, 3, cfg.image_size, cfg.image_size, cfg.channels))
    state = rng.uniform(-1, 1, (b, cfg.state_dim))
    instr = np.arange(b) % cfg.n_instructions
    f4d = rng.normal(0, 1, (b, cfg.n_4d, cfg.d_geo))

    if module == "geo4d":
        geo = init_geo4d(cfg)
        for t in geo.values():
            t.requires_grad = True
        pix = images[:, 0]
        ctx = rng.normal(0, 1, (b, 2 * cfg.tokens_per_view, cfg.d_geo))
        r = rng.normal(0, 1, (b, cfg.n_4d, cfg.d_geo))

        def loss():
            out = decode_step(encode_frame_batch(pix, geo, cfg), DiffTensor(ctx), geo, cfg)
            return ops.sum(out * DiffTensor(r))

        return dict(geo), loss

    policy = Policy(cfg, seed=seed)
    p = policy.params
    # move zero-initialized biases and unit gains off their special values
    for t in p.values():
        t.data = t.data + rng.normal(0, 0.05, t.shape)

    def condition():
        f2d = encode_views(images, p, cfg)
        seq = assemble_sequence(p, cfg, state, instr, f2d, f4d, modes)
        return vlm_forward(seq, build_mask(seq), p, cfg), f2d

    if module == "vlm":
        rz = rng.normal(0, 1, (b, cfg.n_fusion + 1 + cfg.n_lang_tokens + cfg.n_4d + cfg.n_2d, cfg.d_model))
        tgt = rng.uniform(0, 1, (b, cfg.traj_horizon, 2))

        def loss():
            cond, _ = condition()
            return ops.sum(cond.z * DiffTensor(rz)) + traj_loss(traj_head(cond.z_f, p, cfg), tgt)

        names = [k for k in p if k.startswith(("vlm.", "enc2d."))]
        return {k: p[k] for k in names}, loss

    if module == "expert":
        actions = rng.uniform(-1, 1, (b, cfg.chunk, cfg.action_dim))
        step = ex.DiffusionStep(np.array([1, 5, 9]), ex.cosine_alpha_bar(cfg.diffusion_steps)[[1, 5, 9]],
                                rng.normal(0, 1, actions.shape))

        def loss():
            cond, f2d = condition()
            noised = ex.noise_actions(actions, step)
            z_a = ex.expert_forward(noised, step.index, cond, p, cfg)
            eps_hat = ex.predict_noise(z_a, p, noised, step.alpha_bar)
            l_act = ex.action_loss(eps_hat, step.noise, ex.snr_weight(step.alpha_bar, cfg.diffusion_steps))
            l2d, l4d = ex.reconstruction_losses(z_a, modes, {"2d": f2d.data, "4d": f4d}, p, cfg)
            return l_act + l2d + l4d

        names = [k for k in p if k.startswith("expert.")]
        return {k: p[k] for k in names}, loss
    raise ValueError(f"unknown module {module!r}; expected one of {GRAD_MODULES}")


def gradcheck(module: str, n_params: int = 200, tol: float = 1e-5, seed: int = 0, h: float = 1e-5) -> GradcheckReport:
    """Compare backward against central differences on ``n_params`` sampled coordinates."""
    if module not in GRAD_MODULES:
        raise ValueError(f"unknown module {module!r}; expected one of {GRAD_MODULES}")
    params, loss = _problem(module, seed)
    names = sorted(params)
    tensors = [params[k] for k in names]
    sizes = np.array([t.size for t in tensors])
    rng = np.random.default_rng([seed, GRAD_MODULES.index(module)])
    flat = rng.choice(sizes.sum(), size=min(n_params, sizes.sum()), replace=False)
    bounds = np.cumsum(sizes)
    which = np.searchsorted(bounds, flat, side="right")
    coords = [(int(i), int(f - (bounds[i] - sizes[i]))) for i, f in zip(which, flat)]

    for t in tensors:
        t.zero_grad()
    backward(loss())
    analytic = np.array([tensors[i].grad.reshape(-1)[k] for i, k in coords])
    for t in tensors:
        t.zero_grad()

    def f():
        with no_grad():
            return loss().item()

    numeric = fd_gradient(f, [t.data for t in tensors], h=h, coords=coords)
    err = relative_error(analytic, numeric, floor=FLOOR)
    return GradcheckReport(module, len(coords), float(err.max()), int((err > tol).sum()), tol)
