"""Expanding path, segmentation head and the end-to-end network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .attention import BlockParams, init_block, transformer_block
from .config import ModelConfig
from .encoder import EncoderParams, encode, init_encoder
from .iscf import IscfParams, init_iscf, iscf_forward
from .layers import Affine, Norm, init_affine, init_norm
from .numerics import Tensor, concatenate, sigmoid


@dataclass
class ExpandParams:
    proj: Affine  # C -> 2C, no bias
    norm: Norm  # over C/2


@dataclass
class HeadParams:
    expand: Affine  # C1 -> 16 * C1, no bias
    norm: Norm  # over C1
    out: Affine  # C1 -> 1


@dataclass
class DecoderParams:
    # index s holds decoder level s+1; level 3 sits on the bottleneck
    blocks: list[BlockParams]
    expands: list[ExpandParams]  # level 3 -> 2, level 2 -> 1
    skip_fuse: list[Affine]  # levels 1 and 2: 2C -> C
    head: HeadParams


@dataclass
class NetParams:
    encoder: EncoderParams
    decoder: DecoderParams
    iscf: IscfParams | None = None


def pixel_shuffle(tokens: Tensor, dims: tuple[int, int], factor: int) -> Tensor:
    """(B, H*W, f*f*C) -> (B, fH*fW, C); channel groups fill an f x f block row-major."""
    b, n, cc = tokens.shape
    h, w = dims
    c = cc // (factor * factor)
    x = tokens.reshape(b, h, w, factor, factor, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)  # b, h, fy, w, fx, c
    return x.reshape(b, h * factor * w * factor, c)


def patch_expand(tokens: Tensor, dims: tuple[int, int], p: ExpandParams) -> Tensor:
    """Double each spatial side and halve the channel count."""
    c = tokens.shape[-1]
    if c % 2:
        raise ValueError(f"patch_expand: channel count {c} must be even")
    if tokens.shape[-2] != dims[0] * dims[1]:
        raise ValueError(f"patch_expand: {tokens.shape[-2]} tokens do not fill a {dims[0]}x{dims[1]} grid")
    return p.norm(pixel_shuffle(p.proj(tokens), dims, 2))


def skip_fuse(dec: Tensor, skip: Tensor, p: Affine) -> Tensor:
    if dec.shape != skip.shape:
        raise ValueError(f"skip_fuse: decoder {dec.shape} and skip {skip.shape} differ")
    return p(concatenate([dec, skip], axis=-1))


def head(tokens: Tensor, dims: tuple[int, int], p: HeadParams, patch: int) -> Tensor:
    """Expand stage-1 tokens by ``patch`` per side and map each pixel to one logit.

    Returns logits of shape (B, 1, H, W).
    """
    x = p.norm(pixel_shuffle(p.expand(tokens), dims, patch))
    logits = p.out(x)  # (B, H*W, 1)
    b = logits.shape[0]
    return logits.reshape(b, 1, dims[0] * patch, dims[1] * patch)


def decode(skips: list[Tensor], config: ModelConfig, p: DecoderParams) -> Tensor:
    """Run the expanding path. ``skips[2]`` is the bottleneck input."""
    dims = config.stage_dims
    x, _ = transformer_block(skips[2], p.blocks[2])
    for s in (1, 0):
        x = patch_expand(x, dims[s + 1], p.expands[s])
        x = skip_fuse(x, skips[s], p.skip_fuse[s])
        x, _ = transformer_block(x, p.blocks[s])
    return head(x, dims[0], p.head, config.patch_size)


def forward(images, config: ModelConfig, params: NetParams) -> tuple[Tensor, Tensor]:
    """Return ``(probabilities, logits)``, both shaped (B, 1, H, W)."""
    bundle = encode(images, config, params.encoder)
    skips = list(bundle.features)
    if config.iscf_enabled:
        if params.iscf is None:
            raise ValueError("config enables ISCF but no ISCF parameters were given")
        remapped = iscf_forward(bundle.attention, params.iscf, config)
        skips = [f + r for f, r in zip(skips, remapped)]
    logits = decode(skips, config, params.decoder)
    return sigmoid(logits), logits


def init_decoder(rng: np.random.Generator, config: ModelConfig) -> DecoderParams:
    c = config.stage_channels
    blocks = [init_block(rng, c[s], config.heads[s], config.mlp_ratio) for s in range(3)]
    expands = [ExpandParams(init_affine(rng, c[s + 1], 2 * c[s + 1], bias=False), init_norm(c[s])) for s in range(2)]
    fuses = [init_affine(rng, 2 * c[s], c[s]) for s in range(2)]
    p2 = config.patch_size**2
    hp = HeadParams(init_affine(rng, c[0], p2 * c[0], bias=False), init_norm(c[0]), init_affine(rng, c[0], 1))
    return DecoderParams(blocks, expands, fuses, hp)


def init_params(config: ModelConfig, seed: int | None = None) -> NetParams:
    """Initialise all parameters.

    Backbone and ISCF draw from independent streams, so the backbone is the
    same whether or not ISCF is enabled.
    """
    seed = config.seed if seed is None else seed
    backbone_seq, iscf_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(backbone_seq)
    enc = init_encoder(rng, config)
    dec = init_decoder(rng, config)
    isc = init_iscf(np.random.default_rng(iscf_seq), config) if config.iscf_enabled else None
    return NetParams(enc, dec, isc)


def count_params(config: ModelConfig) -> dict[str, int]:
    """Exact trainable-scalar count, total and per module."""
    p = init_params(config)
    counts = {
        "encoder": layers.count(p.encoder),
        "decoder": layers.count(p.decoder),
        "iscf": layers.count(p.iscf) if p.iscf is not None else 0,
    }
    counts["total"] = sum(counts.values())
    return counts
