"""Patch embedding and the three-stage hierarchical encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import BlockParams, init_block, transformer_block
from .config import ModelConfig
from .layers import Affine, Norm, init_affine, init_norm
from .numerics import Tensor


@dataclass
class EmbedParams:
    proj: Affine  # (3 * p * p) -> C1
    norm: Norm


@dataclass
class MergeParams:
    norm: Norm  # over 4C
    proj: Affine  # 4C -> 2C, no bias


@dataclass
class EncoderParams:
    embed: EmbedParams
    stages: list[list[BlockParams]]
    merges: list[MergeParams]


@dataclass
class StageBundle:
    """Per-stage encoder outputs: token features and attention correlations."""

    features: list[Tensor]
    attention: list[Tensor]
    dims: list[tuple[int, int]]

    def shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        return [(f.shape, a.shape) for f, a in zip(self.features, self.attention)]


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, 3, H, W) -> (B, N, 3*p*p) with row-major patch order."""
    b, c, h, w = images.shape
    x = images.reshape(b, c, h // patch, patch, w // patch, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)  # b, hp, wp, c, p, p
    return x.reshape(b, (h // patch) * (w // patch), c * patch * patch)


def patch_embed(images, p: EmbedParams, config: ModelConfig) -> Tensor:
    """Embed non-overlapping patches of a (B, 3, H, W) or (3, H, W) image batch."""
    arr = images.data if isinstance(images, Tensor) else np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ValueError(f"patch_embed: expected (B, 3, H, W) images, got {arr.shape}")
    s = config.image_size
    if arr.shape[2:] != (s, s):
        raise ValueError(f"patch_embed: expected {s}x{s} images, got {arr.shape[2]}x{arr.shape[3]}")
    tokens = Tensor(patchify(arr.astype(p.proj.weight.dtype, copy=False), config.patch_size))
    return p.norm(p.proj(tokens))


def gather_2x2(tokens: Tensor, dims: tuple[int, int]) -> Tensor:
    """(B, H*W, C) -> (B, H/2 * W/2, 4C); each 2x2 neighbourhood concatenated."""
    h, w = dims
    if h % 2 or w % 2:
        raise ValueError(f"patch_merge: spatial dims {dims} must be even")
    b, n, c = tokens.shape
    if n != h * w:
        raise ValueError(f"patch_merge: {n} tokens do not fill a {h}x{w} grid")
    x = tokens.reshape(b, h // 2, 2, w // 2, 2, c)
    x = x.transpose(0, 1, 3, 4, 2, 5)  # b, h/2, w/2, dx, dy, c
    return x.reshape(b, (h // 2) * (w // 2), 4 * c)


def patch_merge(tokens: Tensor, dims: tuple[int, int], p: MergeParams) -> Tensor:
    return p.proj(p.norm(gather_2x2(tokens, dims)))


def encode(images, config: ModelConfig, params: EncoderParams) -> StageBundle:
    x = patch_embed(images, params.embed, config)
    dims = config.stage_dims
    feats, attns = [], []
    for s in range(3):
        if s > 0:
            x = patch_merge(x, dims[s - 1], params.merges[s - 1])
        a = None
        for block in params.stages[s]:
            x, a = transformer_block(x, block)
        feats.append(x)
        attns.append(a)
    return StageBundle(feats, attns, dims)


def init_encoder(rng: np.random.Generator, config: ModelConfig) -> EncoderParams:
    c = config.stage_channels
    patch_dim = 3 * config.patch_size**2
    embed = EmbedParams(init_affine(rng, patch_dim, c[0]), init_norm(c[0]))
    stages = [
        [init_block(rng, c[s], config.heads[s], config.mlp_ratio) for _ in range(config.depths[s])]
        for s in range(3)
    ]
    merges = [MergeParams(init_norm(4 * c[s]), init_affine(rng, 4 * c[s], 2 * c[s], bias=False)) for s in range(2)]
    return EncoderParams(embed, stages, merges)
