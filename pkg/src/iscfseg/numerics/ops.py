"""Differentiable primitives.

Each op computes its forward value with numpy and registers a closure that
pushes the output gradient back onto its inputs.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .tensor import NumericError, Tensor, ensure_tensor, make_node, unbroadcast

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _check_finite_input(x: Tensor, opname: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"{opname}: input contains non-finite values")


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} is out of range for a tensor of rank {ndim}")
    return axis % ndim


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a = ensure_tensor(a, getattr(b, "dtype", None))
    b = ensure_tensor(b, a.dtype)

    def backward(g):
        if a.requires_grad:
            a.accumulate(unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(g, b.shape))

    return make_node(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = ensure_tensor(a, getattr(b, "dtype", None))
    b = ensure_tensor(b, a.dtype)

    def backward(g):
        if a.requires_grad:
            a.accumulate(unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(g * a.data, b.shape))

    return make_node(a.data * b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a.accumulate(-g)

    return make_node(-a.data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        a.accumulate(g * out)

    return make_node(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log: non-positive input")

    def backward(g):
        a.accumulate(g / a.data)

    return make_node(np.log(a.data), (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner extents differ ({a.shape} @ {b.shape})")

    def backward(g):
        if a.requires_grad:
            a.accumulate(unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return make_node(a.data @ b.data, (a, b), backward)


# ---------------------------------------------------------------------------
# reductions and layout


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.shape))

    return make_node(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if a.size == 0:
        raise ValueError("mean of an empty tensor")
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return sum_(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        a.accumulate(g.reshape(a.shape))

    return make_node(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a.accumulate(np.transpose(g, inverse))

    return make_node(np.transpose(a.data, axes), (a,), backward)


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    i, j = i % a.ndim, j % a.ndim
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def concatenate(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    axis = _norm_axis(axis, tensors[0].ndim)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    axis = _norm_axis(axis, tensors[0].ndim + 1)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate(np.take(g, i, axis=axis))

    return make_node(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def take(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis`` (the axis is dropped)."""
    axis = _norm_axis(axis, a.ndim)

    def backward(g):
        full = np.zeros_like(a.data)
        idx = [slice(None)] * a.ndim
        idx[axis] = index
        full[tuple(idx)] = g
        a.accumulate(full)

    return make_node(np.take(a.data, index, axis=axis), (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    _check_finite_input(x, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x.accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return make_node(y, (x,), backward)


def sigmoid_array(z: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function."""
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    y = sigmoid_array(x.data)

    def backward(g):
        x.accumulate(g * y * (1.0 - y))

    return make_node(y, (x,), backward)


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return cdf + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    y = 0.5 * x.data * (1.0 + erf(x.data * _INV_SQRT2))

    def backward(g):
        x.accumulate(g * _gelu_grad(x.data))

    return make_node(y.astype(x.dtype, copy=False), (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"layer_norm: gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=red))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=red))
        if x.requires_grad:
            gx = g * gamma.data
            dx = inv * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            )
            x.accumulate(dx)

    return make_node(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# affine maps and pooling


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def global_avg_pool(x: Tensor, start_axis: int = 0) -> Tensor:
    """Mean over every axis from ``start_axis`` on.

    With the default ``start_axis=0`` this is the arithmetic mean of all
    entries and returns a 0-d tensor.
    """
    if x.size == 0:
        raise ValueError("global_avg_pool: empty tensor")
    axes = tuple(range(start_axis, x.ndim))
    return mean(x, axes)


def fusion_conv_311(stack_: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Depth-3, 1x1 spatial convolution over a ``(..., 3, C, H, W)`` stack.

    The three kernel taps are shared over channels and positions:
    ``out[..., c, h, w] = sum_d weights[d] * stack[..., d, c, h, w] + bias``.
    """
    if stack_.ndim < 4 or stack_.shape[-4] != 3:
        raise ValueError(f"fusion_conv_311: expected a depth-3 stack (..., 3, C, H, W), got {stack_.shape}")
    if weights.shape != (3,):
        raise ValueError(f"fusion_conv_311: expected 3 weights, got shape {weights.shape}")
    if bias.size != 1:
        raise ValueError("fusion_conv_311: bias must be a single value")
    s = stack_.data
    w = weights.data
    out = np.tensordot(s, w, axes=([s.ndim - 4], [0])) + bias.data.reshape(())

    def backward(g):
        if stack_.requires_grad:
            stack_.accumulate(np.multiply.outer(w, g).transpose(_move_first(g.ndim)).copy())
        if weights.requires_grad:
            weights.accumulate(np.array([(np.take(s, d, axis=s.ndim - 4) * g).sum() for d in range(3)], dtype=w.dtype))
        if bias.requires_grad:
            bias.accumulate(np.asarray(g.sum(), dtype=bias.dtype).reshape(bias.shape))

    return make_node(out.astype(s.dtype, copy=False), (stack_, weights, bias), backward)


def _move_first(gdim: int) -> tuple[int, ...]:
    # (3, *lead, C, H, W) -> (*lead, 3, C, H, W)
    lead = gdim - 3
    return tuple(range(1, lead + 1)) + (0,) + tuple(range(lead + 1, gdim + 1))


# ---------------------------------------------------------------------------
# loss


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy evaluated directly from logits.

    Uses ``max(z, 0) - z*y + log1p(exp(-|z|))`` so no probability is ever
    passed through ``log``.
    """
    y = np.asarray(target.data if isinstance(target, Tensor) else target)
    if y.shape != logits.shape:
        raise ValueError(f"bce_with_logits: shapes differ {logits.shape} vs {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_with_logits: target entries must be 0 or 1")
    z = logits.data
    y = y.astype(z.dtype, copy=False)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def backward(g):
        logits.accumulate(g * (sigmoid_array(z) - y) / n)

    return make_node(np.asarray(per.mean(), dtype=z.dtype), (logits,), backward)
