"""2D visual tokens: patch embedding followed by pixel-shuffle folding and a connector projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import VIEWS, ModelConfig
from .nn import Params, linear
from .numerics import ContractError, DiffTensor


@dataclass
class ViewImage:
    view: str
    pixels: np.ndarray  # H x W x C in [0, 1]

    def __post_init__(self):
        if self.view not in VIEWS:
            raise ContractError(f"unknown view {self.view!r}")
        self.pixels = np.clip(np.asarray(self.pixels, dtype=np.float64), 0.0, 1.0)


@dataclass
class TokenBlock:
    tokens: object  # n_tokens x d array or DiffTensor
    segment_tag: str
    view_tag: str | None = None

    @property
    def n_tokens(self):
        return self.tokens.shape[-2]


def patchify(pixels: np.ndarray, patch: int) -> np.ndarray:
    """(..., H, W, C) -> (..., H/p, W/p, p*p*C)."""
    *lead, h, w, c = pixels.shape
    if h % patch or w % patch:
        raise ContractError(f"image {h}x{w} not divisible by patch {patch}")
    x = pixels.reshape(*lead, h // patch, patch, w // patch, patch, c)
    x = np.moveaxis(x, -4, -3)
    return x.reshape(*lead, h // patch, w // patch, patch * patch * c)


def pixel_shuffle(x, r: int):
    """Fold r x r spatial neighbourhoods into channels: (B, h, w, c) -> (B, h/r, w/r, r*r*c)."""
    b, h, w, c = x.shape
    x = x.reshape(b, h // r, r, w // r, r, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h // r, w // r, r * r * c)


def init_encoder_2d(p: Params, cfg: ModelConfig, prefix="enc2d"):
    pdim = cfg.patch * cfg.patch * cfg.channels
    p.dense(f"{prefix}.patch", pdim, cfg.d_model)
    p.dense(f"{prefix}.connector", cfg.d_model * cfg.shuffle ** 2, cfg.d_model)


def encode_2d_batch(pixels: np.ndarray, p, cfg: ModelConfig, prefix="enc2d") -> DiffTensor:
    """Encode a stack of images (N, H, W, C) into (N, tokens_per_view, d_model)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    expect = (cfg.image_size, cfg.image_size, cfg.channels)
    if pixels.shape[1:] != expect:
        raise ContractError(f"expected images of shape {expect}, got {pixels.shape[1:]}")
    n = pixels.shape[0]
    patches = DiffTensor(patchify(pixels, cfg.patch))
    x = linear(patches, p, f"{prefix}.patch")
    x = pixel_shuffle(x, cfg.shuffle)
    x = x.reshape(n, cfg.tokens_per_view, cfg.d_model * cfg.shuffle ** 2)
    return linear(x, p, f"{prefix}.connector")


def encode_2d(img: ViewImage, p, cfg: ModelConfig, prefix="enc2d") -> TokenBlock:
    tokens = encode_2d_batch(img.pixels[None], p, cfg, prefix)
    return TokenBlock(tokens.reshape(cfg.tokens_per_view, cfg.d_model), "2d", img.view)


def encode_views(images: np.ndarray, p, cfg: ModelConfig, prefix="enc2d") -> DiffTensor:
    """(B, 3, H, W, C) ordered [left, right, front] -> (B, 3 * tokens_per_view, d_model)."""
    b, v = images.shape[:2]
    if v != len(VIEWS):
        raise ContractError(f"expected {len(VIEWS)} views, got {v}")
    tok = encode_2d_batch(images.reshape(b * v, *images.shape[2:]), p, cfg, prefix)
    return tok.reshape(b, v * cfg.tokens_per_view, cfg.d_model)
