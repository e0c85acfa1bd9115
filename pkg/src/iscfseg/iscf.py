"""Inter-scale context fusion.

The per-stage attention outputs are brought to the stage-3 geometry, pooled
into one scalar each, turned into sigmoid gates by a small FFN, gated,
stacked along a new depth axis and fused with a depth-3 convolution. The
fused map is then projected back to each stage's geometry so it can be added
to the skip connections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .layers import DTYPE, Affine, init_affine, zero_affine
from .numerics import (
    Tensor,
    fusion_conv_311,
    gelu,
    global_avg_pool,
    sigmoid,
    stack,
    swapaxes,
    take,
)


@dataclass
class IscfParams:
    chan_eq: list[Affine]  # C1->C3, C2->C3
    token_eq: list[Affine]  # N1->N3, N2->N3
    gate_fc1: Affine  # 3 -> hidden
    gate_fc2: Affine  # hidden -> 3
    fuse_weight: Tensor  # (3,)
    fuse_bias: Tensor  # (1,)
    token_remap: list[Affine]  # N3->N1, N3->N2
    chan_remap: list[Affine]  # C3->C1, C3->C2, C3->C3


def token_affine(x: Tensor, p: Affine) -> Tensor:
    """Apply an affine map along the token axis of (B, N, C)."""
    return swapaxes(p(swapaxes(x, -1, -2)), -1, -2)


def _expect_shape(x: Tensor, n: int, c: int, what: str) -> None:
    if x.shape[-2:] != (n, c):
        raise ValueError(f"{what}: expected (..., {n}, {c}), got {x.shape}")


def equalize(a: Tensor, stage: int, params: IscfParams, config: ModelConfig) -> Tensor:
    """Bring stage ``stage`` (1-based) attention output to the (N3, C3) geometry."""
    if stage not in (1, 2, 3):
        raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
    n, c = config.stage_tokens[stage - 1], config.stage_channels[stage - 1]
    _expect_shape(a, n, c, f"equalize stage {stage}")
    if stage == 3:
        return a
    x = params.chan_eq[stage - 1](a)
    return token_affine(x, params.token_eq[stage - 1])


def pooled_values(maps: list[Tensor]) -> Tensor:
    """One global average per map and per sample: (B, 3)."""
    if len(maps) != 3:
        raise ValueError("expected three equalized maps")
    if any(m.shape != maps[0].shape for m in maps):
        raise ValueError(f"equalized maps differ in shape: {[m.shape for m in maps]}")
    return stack([global_avg_pool(m, start_axis=m.ndim - 2) for m in maps], axis=-1)


def gate_ffn(pooled: Tensor, params: IscfParams) -> Tensor:
    if pooled.ndim == 1:
        return gate_ffn(pooled.reshape(1, -1), params).reshape(-1)
    return sigmoid(params.gate_fc2(gelu(params.gate_fc1(pooled))))


def compute_gates(maps: list[Tensor], params: IscfParams) -> Tensor:
    """Sigmoid gate per stage, shape (B, 3) (or (3,) for unbatched maps)."""
    return gate_ffn(pooled_values(maps), params)


def to_grid(tokens: Tensor, dims: tuple[int, int]) -> Tensor:
    """(..., N, C) -> (..., C, H, W)."""
    *lead, n, c = tokens.shape
    return swapaxes(tokens, -1, -2).reshape(*lead, c, *dims)


def from_grid(grid: Tensor) -> Tensor:
    """(..., C, H, W) -> (..., N, C)."""
    *lead, c, h, w = grid.shape
    return swapaxes(grid.reshape(*lead, c, h * w), -1, -2)


def fuse(maps: list[Tensor], gates: Tensor, params: IscfParams, config: ModelConfig) -> Tensor:
    """Gate each map by its scalar, stack on a depth axis and apply the 3x1x1 fusion."""
    dims = config.stage_dims[2]
    gated = []
    for s, m in enumerate(maps):
        w = take(gates, s, axis=-1)
        w = w.reshape(*w.shape, 1, 1)
        gated.append(to_grid(m * w, dims))
    depth_axis = gated[0].ndim - 3
    fused = fusion_conv_311(stack(gated, axis=depth_axis), params.fuse_weight, params.fuse_bias)
    return from_grid(fused)


def remap(fused: Tensor, params: IscfParams, config: ModelConfig) -> list[Tensor]:
    """Project the fused (N3, C3) map back to every stage's (N_s, C_s)."""
    _expect_shape(fused, config.stage_tokens[2], config.stage_channels[2], "remap")
    out = []
    for s in range(3):
        x = fused if s == 2 else token_affine(fused, params.token_remap[s])
        out.append(params.chan_remap[s](x))
    return out


def iscf_forward(attn: list[Tensor], params: IscfParams, config: ModelConfig) -> list[Tensor]:
    maps = [equalize(a, s + 1, params, config) for s, a in enumerate(attn)]
    gates = compute_gates(maps, params)
    return remap(fuse(maps, gates, params, config), params, config)


def init_iscf(rng: np.random.Generator, config: ModelConfig) -> IscfParams:
    c, n = config.stage_channels, config.stage_tokens
    h = config.iscf_hidden
    return IscfParams(
        chan_eq=[init_affine(rng, c[s], c[2]) for s in range(2)],
        token_eq=[init_affine(rng, n[s], n[2]) for s in range(2)],
        gate_fc1=init_affine(rng, 3, h),
        gate_fc2=init_affine(rng, h, 3),
        fuse_weight=Tensor(np.full(3, 1.0 / 3.0, dtype=DTYPE)),
        fuse_bias=Tensor(np.zeros(1, dtype=DTYPE)),
        token_remap=[init_affine(rng, n[2], n[s]) for s in range(2)],
        # zero channel remaps make the module start as an exact no-op
        chan_remap=[zero_affine(c[2], c[s]) for s in range(3)],
    )


def iscf_param_count(config: ModelConfig) -> int:
    """Closed-form number of trainable scalars in the module."""
    c, n = config.stage_channels, config.stage_tokens
    h = config.iscf_hidden
    chan_eq = sum(c[s] * c[2] + c[2] for s in range(2))
    token_eq = sum(n[s] * n[2] + n[2] for s in range(2))
    gates = (3 * h + h) + (h * 3 + 3)
    fusion = 3 + 1
    token_remap = sum(n[2] * n[s] + n[s] for s in range(2))
    chan_remap = sum(c[2] * c[s] + c[s] for s in range(3))
    return chan_eq + token_eq + gates + fusion + token_remap + chan_remap
