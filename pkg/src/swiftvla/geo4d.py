"""Frozen incremental 4D feature extractor with a FIFO temporal cache.

Each timestep the three views are encoded and decoded in the fixed order
left, right, front. Decoding runs spatial self-attention over the frame's own
tokens and temporal cross-attention against every block currently in the
cache; the decoded block is then appended to the cache. After the front view
the cache is trimmed to the most recent ``K`` timesteps and only the front
block is returned.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import VIEWS, ModelConfig
from .nn import Params, attend, layer_norm, linear, mlp, project_kv, self_attention
from .numerics import ContractError, DiffTensor, no_grad, ops
from .percept2d import TokenBlock, ViewImage, patchify, pixel_shuffle


def init_geo4d(cfg: ModelConfig) -> Params:
    """Random frozen weights, fully determined by ``cfg.geo_seed``."""
    p = Params(np.random.default_rng(cfg.geo_seed), trainable=False)
    d = cfg.d_geo
    p.dense("geo.enc.patch", cfg.patch * cfg.patch * cfg.channels, d, scale=2.0)
    p.dense("geo.enc.fold", d * cfg.shuffle ** 2, d, scale=1.5)
    p.norm("geo.enc.ln", d)
    for i in range(cfg.geo_blocks):
        b = f"geo.dec{i}"
        p.norm(f"{b}.ln_s", d)
        p.attention(f"{b}.spatial", d)
        p.norm(f"{b}.ln_t", d)
        p.norm(f"{b}.ln_c", d)
        p.attention(f"{b}.temporal", d)
        p.norm(f"{b}.ln_m", d)
        p.mlp(f"{b}.mlp", d, cfg.geo_mlp_mult)
    p.norm("geo.out", d)
    return p


def encode_frame_batch(pixels: np.ndarray, p, cfg: ModelConfig) -> DiffTensor:
    """(B, H, W, C) -> F_e of shape (B, tokens_per_view, d_geo)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    expect = (cfg.image_size, cfg.image_size, cfg.channels)
    if pixels.shape[1:] != expect:
        raise ContractError(f"expected images of shape {expect}, got {pixels.shape[1:]}")
    b = pixels.shape[0]
    x = ops.silu(linear(DiffTensor(patchify(pixels, cfg.patch)), p, "geo.enc.patch"))
    x = pixel_shuffle(x, cfg.shuffle).reshape(b, cfg.tokens_per_view, cfg.d_geo * cfg.shuffle ** 2)
    return layer_norm(linear(x, p, "geo.enc.fold"), p, "geo.enc.ln")


def encode_frame(img: ViewImage, p, cfg: ModelConfig) -> TokenBlock:
    with no_grad():
        x = encode_frame_batch(img.pixels[None], p, cfg)
    return TokenBlock(x.data[0], "geo_enc", img.view)


def decode_step(f_e, context, p, cfg: ModelConfig) -> DiffTensor:
    """Decoder(CrossAttn(F_e, C)) for a batch: ``f_e`` (B, n, d), ``context`` (B, m, d) or None.

    With an empty cache the temporal cross-attention is skipped.
    """
    x = f_e if isinstance(f_e, DiffTensor) else DiffTensor(f_e)
    ctx = None
    if context is not None and context.shape[1] > 0:
        ctx = context if isinstance(context, DiffTensor) else DiffTensor(context)
    h = cfg.n_heads
    for i in range(cfg.geo_blocks):
        b = f"geo.dec{i}"
        a, _ = self_attention(layer_norm(x, p, f"{b}.ln_s"), p, f"{b}.spatial", h)
        x = x + a
        if ctx is not None:
            k, v = project_kv(layer_norm(ctx, p, f"{b}.ln_c"), p, f"{b}.temporal", h)
            x = x + attend(layer_norm(x, p, f"{b}.ln_t"), k, v, p, f"{b}.temporal", h)
        x = x + mlp(layer_norm(x, p, f"{b}.ln_m"), p, f"{b}.mlp")
    return layer_norm(x, p, "geo.out")


@dataclass
class CacheEntry:
    timestep: int
    view: int
    block: np.ndarray  # (B, n, d_geo)


@dataclass
class TemporalCache:
    """FIFO of decoded per-view blocks; capacity counted in timesteps."""

    capacity: int
    entries: list = field(default_factory=list)
    next_timestep: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ContractError("cache capacity must be >= 1")

    def append(self, timestep: int, view: int, block: np.ndarray):
        if self.entries:
            last = self.entries[-1]
            if (timestep, view) <= (last.timestep, last.view):
                raise ContractError("cache entries must be appended in (timestep, view) order")
        self.entries.append(CacheEntry(timestep, view, np.asarray(block)))

    def timesteps(self):
        return sorted({e.timestep for e in self.entries})

    def evict(self):
        keep = set(self.timesteps()[-self.capacity:])
        self.entries = [e for e in self.entries if e.timestep in keep]

    def context(self):
        if not self.entries:
            return None
        return np.concatenate([e.block for e in self.entries], axis=1)

    def keys(self):
        return [(e.timestep, e.view) for e in self.entries]

    def state_dict(self) -> dict:
        blocks = {f"cache/{e.timestep}/{e.view}": e.block for e in self.entries}
        return {"capacity": self.capacity, "next_timestep": self.next_timestep, "blocks": blocks}

    @classmethod
    def from_state_dict(cls, state: dict):
        cache = cls(int(state["capacity"]), next_timestep=int(state["next_timestep"]))
        items = []
        for name, block in state["blocks"].items():
            _, t, v = name.split("/")
            items.append((int(t), int(v), block))
        for t, v, block in sorted(items, key=lambda e: (e[0], e[1])):
            cache.append(t, v, block)
        return cache


def process_timestep_batch(images: np.ndarray, cache: TemporalCache, p, cfg: ModelConfig,
                           timestep: int | None = None) -> np.ndarray:
    """Run one timestep for a batch of streams sharing ``cache``.

    ``images`` is (B, 3, H, W, C) in view order [left, right, front]. Returns
    the front view's 4D block (B, n, d_geo).
    """
    images = np.asarray(images)
    if images.ndim != 5 or images.shape[1] != len(VIEWS):
        raise ContractError(f"expected (B, {len(VIEWS)}, H, W, C) views, got {images.shape}")
    t = cache.next_timestep if timestep is None else timestep
    with no_grad():
        f_e = encode_frame_batch(images.reshape(-1, *images.shape[2:]), p, cfg)
        f_e = f_e.data.reshape(images.shape[0], len(VIEWS), *f_e.shape[1:])
        out = None
        for k in range(len(VIEWS)):
            out = decode_step(f_e[:, k], cache.context(), p, cfg).data
            cache.append(t, k, out)
    cache.evict()
    cache.next_timestep = t + 1
    return out


def process_timestep(obs, cache: TemporalCache, p, cfg: ModelConfig, timestep: int | None = None) -> TokenBlock:
    """Single-stream form taking the three :class:`ViewImage` objects in order."""
    obs = list(obs)
    if [o.view for o in obs] != list(VIEWS):
        raise ContractError(f"views must be given in order {list(VIEWS)}, got {[o.view for o in obs]}")
    images = np.stack([o.pixels for o in obs])[None]
    block = process_timestep_batch(images, cache, p, cfg, timestep)
    return TokenBlock(block[0], "4d", "front")


def extract_stream(frames: np.ndarray, k: int, p, cfg: ModelConfig) -> np.ndarray:
    """4D features for whole streams: frames (B, T, 3, H, W, C) -> (B, T, n, d_geo).

    uint8 frames are scaled to [0, 1] one timestep at a time.
    """
    cache = TemporalCache(k)
    out = []
    for t in range(frames.shape[1]):
        f = frames[:, t]
        if f.dtype == np.uint8:
            f = f / 255.0
        out.append(process_timestep_batch(f, cache, p, cfg))
    return np.stack(out, axis=1)


def adapter_needed(cfg: ModelConfig) -> bool:
    return cfg.d_geo != cfg.d_model

