"""Efficient (linear-complexity) attention and the pre-norm transformer block.

Efficient attention normalises queries over their feature axis and keys over
the token axis, then contracts keys with values first:

    E = softmax_feat(Q) @ (softmax_tok(K)^T @ V)

The ``d x d`` context matrix replaces the ``N x N`` attention map, so cost
grows linearly in the token count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Affine, Norm, init_affine, init_norm, zero_affine
from .numerics import Tensor, gelu, matmul, softmax, swapaxes


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int = field(default=1, metadata={"static": True})

    def __post_init__(self) -> None:
        c = self.wq.shape[0]
        for w in (self.wq, self.wk, self.wv, self.wo):
            if w.shape != (c, c):
                raise ValueError(f"attention projections must be {c}x{c}, got {w.shape}")
        if self.heads < 1 or c % self.heads:
            raise ValueError(f"heads={self.heads} does not divide width {c}")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]


@dataclass
class BlockParams:
    attn: AttentionParams
    ln1: Norm
    ln2: Norm
    fc1: Affine
    fc2: Affine


def efficient_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Efficient attention over the last two axes ``(..., N, d)``."""
    if q.shape != k.shape or q.shape != v.shape:
        raise ValueError(f"efficient_attention: Q, K, V shapes differ {q.shape}, {k.shape}, {v.shape}")
    if q.ndim < 2 or q.shape[-2] < 1:
        raise ValueError("efficient_attention: need at least one token")
    rho_q = softmax(q, axis=-1)
    rho_k = softmax(k, axis=-2)
    context = matmul(swapaxes(rho_k, -1, -2), v)  # (..., d, d)
    return matmul(rho_q, context)


# plain-array kernels used by the benchmark and as oracles --------------------


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def efficient_attention_array(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    return _softmax_np(q, -1) @ (np.swapaxes(_softmax_np(k, -2), -1, -2) @ v)


def dense_oracle_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Same normalisation as efficient attention, but with the N x N map materialised."""
    attn = _softmax_np(q, -1) @ np.swapaxes(_softmax_np(k, -2), -1, -2)
    return attn @ v


def dense_softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Conventional scaled dot-product attention (quadratic reference)."""
    d = q.shape[-1]
    return _softmax_np(q @ np.swapaxes(k, -1, -2) / np.sqrt(d), -1) @ v


# ---------------------------------------------------------------------------


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, c = x.shape
    return x.reshape(*lead, n, heads, c // heads).transpose(*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d = x.shape
    nl = len(lead)
    return x.transpose(*range(nl), nl + 1, nl, nl + 2).reshape(*lead, n, h * d)


def multi_head_efficient_attention(x: Tensor, p: AttentionParams) -> Tensor:
    """Project, split into heads, attend per head, concatenate and project out."""
    if x.shape[-1] != p.dim:
        raise ValueError(f"input width {x.shape[-1]} does not match attention width {p.dim}")
    q = split_heads(matmul(x, p.wq), p.heads)
    k = split_heads(matmul(x, p.wk), p.heads)
    v = split_heads(matmul(x, p.wv), p.heads)
    return matmul(merge_heads(efficient_attention(q, k, v)), p.wo)


def mlp(x: Tensor, p: BlockParams) -> Tensor:
    return p.fc2(gelu(p.fc1(x)))


def transformer_block(x: Tensor, p: BlockParams) -> tuple[Tensor, Tensor]:
    """Pre-norm block. Returns the block output and its attention branch output."""
    a = multi_head_efficient_attention(p.ln1(x), p.attn)
    x = x + a
    y = x + mlp(p.ln2(x), p)
    return y, a


def init_attention(rng: np.random.Generator, dim: int, heads: int) -> AttentionParams:
    w = [init_affine(rng, dim, dim, bias=False).weight for _ in range(4)]
    return AttentionParams(*w, heads=heads)


def init_block(rng: np.random.Generator, dim: int, heads: int, mlp_ratio: int = 4) -> BlockParams:
    hidden = mlp_ratio * dim
    return BlockParams(
        attn=init_attention(rng, dim, heads),
        ln1=init_norm(dim),
        ln2=init_norm(dim),
        fc1=init_affine(rng, dim, hidden),
        fc2=init_affine(rng, hidden, dim),
    )


def zero_residual_block(rng: np.random.Generator, dim: int, heads: int, mlp_ratio: int = 4) -> BlockParams:
    """Block whose attention and MLP output projections are zero, so it is the identity."""
    p = init_block(rng, dim, heads, mlp_ratio)
    p.attn.wo = Tensor(np.zeros_like(p.attn.wo.data))
    p.fc2 = zero_affine(mlp_ratio * dim, dim)
    return p


def block_param_count(dim: int, mlp_ratio: int = 4) -> int:
    hidden = mlp_ratio * dim
    return 4 * dim * dim + 4 * dim + (dim * hidden + hidden) + (hidden * dim + dim)
