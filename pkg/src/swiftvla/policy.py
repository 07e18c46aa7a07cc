"""The full policy: 2D encoder, VLM trunk with fusion tokens, action expert, and the frozen 4D branch."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expert as ex
from .config import ModelConfig
from .fusion import MaskMode, assemble_sequence, build_mask, init_vlm, traj_head, traj_loss, vlm_forward
from .geo4d import init_geo4d
from .nn import Params
from .numerics import ContractError, DiffTensor
from .percept2d import encode_views, init_encoder_2d

# parameters dropped by pruned inference (besides the frozen 4D extractor)
PRUNED_PREFIXES = ("expert.h_2d", "expert.h_4d", "vlm.traj_head", "vlm.pos.4d", "vlm.adapter4d")


@dataclass
class Batch:
    images: np.ndarray  # (B, 3, H, W, C) float in [0, 1]
    state: np.ndarray  # (B, state_dim)
    instruction: np.ndarray  # (B,)
    f4d: np.ndarray | None  # (B, n_4d, d_geo)
    chunk: np.ndarray | None = None  # (B, H_a, action_dim)
    traj: np.ndarray | None = None  # (B, H_traj, 2)


@dataclass
class LossTerms:
    total: DiffTensor
    action: DiffTensor
    traj: object
    rec2d: object
    rec4d: object

    def values(self) -> dict:
        f = lambda v: v.item() if isinstance(v, DiffTensor) else float(v)  # noqa: E731
        return {"total": f(self.total), "action": f(self.action), "traj": f(self.traj),
                "rec2d": f(self.rec2d), "rec4d": f(self.rec4d)}


class Policy:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg.validate()
        self.params = Params(np.random.default_rng(seed))
        init_encoder_2d(self.params, cfg)
        init_vlm(self.params, cfg)
        ex.init_expert(self.params, cfg)
        self.geo = init_geo4d(cfg) if cfg.use_4d else None

    # -- bookkeeping ------------------------------------------------------
    def parameter_count(self, mode: str = "with4d") -> int:
        n = self.params.count()
        if mode == "with4d":
            return n + (self.geo.count() if self.geo is not None else 0)
        if mode == "pruned":
            return n - sum(self.params.count(p) for p in PRUNED_PREFIXES)
        raise ValueError(f"unknown mode {mode!r}")

    def inference_params(self, mode: str) -> dict:
        if mode == "pruned":
            return {k: v for k, v in self.params.items() if not k.startswith(PRUNED_PREFIXES)}
        return dict(self.params)

    # -- forward ----------------------------------------------------------
    def condition(self, batch: Batch, mask_modes=MaskMode.NONE, use_fusion=True, params=None):
        p = self.params if params is None else params
        f2d = encode_views(batch.images, p, self.cfg)
        seq = assemble_sequence(p, self.cfg, batch.state, batch.instruction, f2d, batch.f4d,
                                mask_modes, use_fusion)
        return vlm_forward(seq, build_mask(seq), p, self.cfg), f2d

    def losses(self, batch: Batch, step: ex.DiffusionStep, weights: dict, mask_modes=MaskMode.NONE,
               use_fusion=True, stage: int = 2) -> LossTerms:
        """Weighted total of action, trajectory and reconstruction terms.

        Stage 1 keeps only the action term; the trajectory and reconstruction
        heads are then never evaluated.
        """
        cond, f2d = self.condition(batch, mask_modes, use_fusion)
        b = batch.chunk.shape[0]
        m = len(step.index) // b  # noise draws per observation, tiled draw-major
        if m < 1 or m * b != len(step.index):
            raise ContractError(f"{len(step.index)} diffusion draws do not tile a batch of {b}")
        noised = ex.noise_actions(np.tile(batch.chunk, (m, 1, 1)), step)
        z_a = ex.expert_forward(noised, step.index, ex.repeat_condition(cond, m), self.params, self.cfg)
        eps_hat = ex.predict_noise(z_a, self.params, noised, step.alpha_bar)
        l_action = ex.action_loss(eps_hat, step.noise, ex.snr_weight(step.alpha_bar, self.cfg.diffusion_steps))
        terms = [(l_action, weights["action"])]
        l_traj = l2d = l4d = 0.0
        if stage == 2:
            if cond.n_fusion:
                l_traj = traj_loss(traj_head(cond.z_f, self.params, self.cfg), batch.traj)
                terms.append((l_traj, weights["traj"]))
            tile = lambda x: None if x is None else np.tile(x, (m,) + (1,) * (x.ndim - 1))  # noqa: E731
            targets = {"2d": tile(f2d.data), "4d": tile(batch.f4d)}
            l2d, l4d = ex.reconstruction_losses(z_a, tile(cond.seq.mask_modes), targets, self.params, self.cfg)
            terms += [(l2d, weights["rec2d"]), (l4d, weights["rec4d"])]
        # zero-weight terms stay out of the graph so they send no gradient at all
        total = DiffTensor(0.0)
        for term, w in terms:
            if isinstance(term, DiffTensor) and w > 0:
                total = total + term * w
        return LossTerms(total, l_action, l_traj, l2d, l4d)

    def act(self, batch: Batch, mode: str = "with4d", mask_modes=MaskMode.NONE, use_fusion=True,
            noise=None, rng=None, n_steps=None) -> np.ndarray:
        """Sample an action chunk per batch element.

        ``mode='pruned'`` drops the 4D segment and uses only the deployed
        parameter subset.
        """
        params = self.inference_params(mode)
        if mode == "pruned":
            batch = Batch(batch.images, batch.state, batch.instruction, None)
        cond, _ = self.condition(batch, mask_modes, use_fusion, params)
        return ex.sample_actions(cond, params, self.cfg, rng=rng, n_steps=n_steps, noise=noise)

    def predict_traj(self, batch: Batch, mask_modes=MaskMode.NONE) -> np.ndarray:
        cond, _ = self.condition(batch, mask_modes)
        return traj_head(cond.z_f, self.params, self.cfg).data


def weights_from(cfg) -> dict:
    return {"action": cfg.lambda_action, "traj": cfg.lambda_traj, "rec2d": cfg.lambda_2d, "rec4d": cfg.lambda_4d}

