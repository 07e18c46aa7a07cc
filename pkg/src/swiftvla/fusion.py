"""Multimodal token sequence, structured attention masks and the VLM trunk.

Segment order is fixed: fusion | state | language | 4D | 2D. Positions are
segment-relative, so dropping the 4D segment leaves every other token's
position untouched.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .nn import Params, layer_norm, linear, mlp, self_attention
from .numerics import ContractError, DiffTensor, ops

SEGMENTS = ("fusion", "state", "language", "4d", "2d")


class MaskMode(enum.IntEnum):
    NONE = 0
    MASK2D = 1
    MASK4D = 2


def parse_mask_modes(mask_mode, batch: int) -> np.ndarray:
    """Normalize a single mode or per-element modes to an int array of length ``batch``."""
    if isinstance(mask_mode, str):
        if "+" in mask_mode or mask_mode == "both":
            raise ContractError("mask2d and mask4d are mutually exclusive")
        mask_mode = MaskMode[mask_mode.upper()]
    if isinstance(mask_mode, (set, frozenset)):
        raise ContractError("mask2d and mask4d are mutually exclusive")
    modes = np.broadcast_to(np.asarray(mask_mode, dtype=np.int64), (batch,)).copy()
    if modes.size and (modes.min() < 0 or modes.max() > 2):
        raise ContractError(f"invalid mask modes {np.unique(modes)}")
    return modes


# position codes must stand out against near-uniform background patches
POS_STD = 0.5


def init_vlm(p: Params, cfg: ModelConfig):
    d = cfg.d_model
    if cfg.n_fusion:
        p.table("vlm.fusion_tokens", cfg.n_fusion, d, std=0.5)
        p.table("vlm.pos.fusion", cfg.n_fusion, d, std=POS_STD)
    p.dense("vlm.state_embed", cfg.state_dim, d)
    p.table("vlm.lang_table", cfg.n_instructions, cfg.n_lang_tokens, d, std=0.5)
    p.table("vlm.pos.language", cfg.n_lang_tokens, d, std=POS_STD)
    if cfg.use_4d:
        if cfg.d_geo != cfg.d_model:
            p.dense("vlm.adapter4d", cfg.d_geo, d)
        p.table("vlm.pos.4d", cfg.n_4d, d, std=POS_STD)
    p.table("vlm.pos.2d", cfg.n_2d, d, std=POS_STD)
    p.table("vlm.segment", len(SEGMENTS), d, std=POS_STD)
    for i in range(cfg.n_layers):
        p.norm(f"vlm.{i}.ln1", d)
        p.attention(f"vlm.{i}.attn", d)
        p.norm(f"vlm.{i}.ln2", d)
        p.mlp(f"vlm.{i}.mlp", d)
    p.norm("vlm.final", d)
    if cfg.n_fusion:
        p.dense("vlm.traj_head", d, cfg.traj_horizon * 2)


@dataclass
class TokenSequence:
    """Embedded segments (each (B, n, d)) plus per-element mask modes."""

    segments: dict
    mask_modes: np.ndarray

    @property
    def names(self):
        return list(self.segments)

    @property
    def lengths(self):
        return {k: v.shape[1] for k, v in self.segments.items()}

    @property
    def batch(self):
        return next(iter(self.segments.values())).shape[0]

    def __len__(self):
        return sum(self.lengths.values())

    def segment_ids(self) -> np.ndarray:
        return np.concatenate([np.full(n, SEGMENTS.index(k)) for k, n in self.lengths.items()])

    def positions(self) -> np.ndarray:
        """(segment_id, within-segment index) per token."""
        return np.stack([self.segment_ids(),
                         np.concatenate([np.arange(n) for n in self.lengths.values()])], axis=1)

    def slice_of(self, name):
        start = 0
        for k, n in self.lengths.items():
            if k == name:
                return slice(start, start + n)
            start += n
        raise KeyError(name)

    def embedded(self) -> DiffTensor:
        return ops.concat(list(self.segments.values()), axis=1)


def _segment(p, name, x):
    return x + p["vlm.pos." + name] + p["vlm.segment"][SEGMENTS.index(name)]


def assemble_sequence(p, cfg: ModelConfig, state: np.ndarray, instruction, f2d, f4d=None,
                      mask_mode=MaskMode.NONE, use_fusion=True) -> TokenSequence:
    """Build the fixed-order sequence.

    ``state`` (B, state_dim); ``instruction`` int ids (B,); ``f2d`` (B, n_2d, d);
    ``f4d`` (B, n_4d, d_geo) or None for the pruned path.
    """
    state = np.asarray(state, dtype=np.float64)
    b = state.shape[0]
    modes = parse_mask_modes(mask_mode, b)
    ids = np.asarray(instruction)
    if ids.shape != (b,) or ids.dtype.kind not in "iu" or ids.min() < 0 or ids.max() >= cfg.n_instructions:
        raise ContractError(f"unknown instruction id(s) {instruction!r}")
    segs = {}
    if use_fusion and cfg.n_fusion:
        q = p["vlm.fusion_tokens"].reshape(1, cfg.n_fusion, cfg.d_model)
        segs["fusion"] = _segment(p, "fusion", q + np.zeros((b, 1, 1)))
    st = linear(DiffTensor(state), p, "vlm.state_embed").reshape(b, 1, cfg.d_model)
    segs["state"] = st + p["vlm.segment"][SEGMENTS.index("state")]
    segs["language"] = _segment(p, "language", ops.embedding(p["vlm.lang_table"], ids))
    if f4d is not None:
        if not cfg.use_4d:
            raise ContractError("model configured without 4D input")
        x4 = f4d if isinstance(f4d, DiffTensor) else DiffTensor(f4d)
        if cfg.d_geo != cfg.d_model:
            x4 = linear(x4, p, "vlm.adapter4d")
        segs["4d"] = _segment(p, "4d", x4)
    segs["2d"] = _segment(p, "2d", f2d if isinstance(f2d, DiffTensor) else DiffTensor(f2d))
    return TokenSequence(segs, modes)


def key_visibility(seq: TokenSequence) -> np.ndarray:
    """(B, n): False for tokens of the masked modality."""
    seg = seq.segment_ids()
    hidden = np.zeros((seq.batch, len(seg)), dtype=bool)
    hidden |= (seq.mask_modes == MaskMode.MASK4D)[:, None] & (seg == SEGMENTS.index("4d"))[None]
    hidden |= (seq.mask_modes == MaskMode.MASK2D)[:, None] & (seg == SEGMENTS.index("2d"))[None]
    return ~hidden


def build_mask(seq: TokenSequence) -> np.ndarray:
    """(B, n, n) query->key visibility.

    Fusion queries see every unmasked token; other queries see every unmasked
    non-fusion token; tokens of the masked modality neither see nor are seen.
    """
    seg = seq.segment_ids()
    is_fusion = seg == SEGMENTS.index("fusion")
    ok = key_visibility(seq)
    pair = is_fusion[:, None] | ~is_fusion[None, :]
    return ok[:, :, None] & ok[:, None, :] & pair[None]


@dataclass
class FusionState:
    hidden: list  # per-layer (B, n, d) after each block
    kv: list  # per-layer (k, v), each (B, heads, n, d_head)
    key_visible: np.ndarray  # (B, n)
    z: DiffTensor  # final normed states (B, n, d)
    n_fusion: int
    seq: TokenSequence = field(repr=False)

    @property
    def z_f(self):
        return self.z[:, :self.n_fusion] if self.n_fusion else None


def vlm_forward(seq: TokenSequence, mask: np.ndarray, p, cfg: ModelConfig) -> FusionState:
    n = len(seq)
    if mask.shape != (seq.batch, n, n):
        raise ContractError(f"mask shape {mask.shape} does not match sequence ({seq.batch}, {n}, {n})")
    x = seq.embedded()
    vis = mask[:, None]
    hidden, kvs = [], []
    for i in range(cfg.n_layers):
        a, kv = self_attention(layer_norm(x, p, f"vlm.{i}.ln1"), p, f"vlm.{i}.attn", cfg.n_heads, vis)
        x = x + a
        x = x + mlp(layer_norm(x, p, f"vlm.{i}.ln2"), p, f"vlm.{i}.mlp")
        hidden.append(x)
        kvs.append(kv)
    z = layer_norm(x, p, "vlm.final")
    return FusionState(hidden, kvs, key_visibility(seq), z, seq.lengths.get("fusion", 0), seq)


def traj_head(z_f: DiffTensor, p, cfg: ModelConfig) -> DiffTensor:
    """Mean-pooled fusion states -> (B, traj_horizon, 2) planar waypoints."""
    pooled = ops.mean(z_f, axis=1)
    return linear(pooled, p, "vlm.traj_head").reshape(z_f.shape[0], cfg.traj_horizon, 2)


def traj_loss(pred: DiffTensor, target) -> DiffTensor:
    """Squared L2 error summed over waypoints, averaged over the batch."""
    d = pred - DiffTensor(target)
    return ops.mean(ops.sum(ops.square(d).reshape(d.shape[0], -1), axis=1))
