"""Finite-difference checks for every differentiable op, run at desk scale in float64."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attention, decoder, encoder, iscf, layers
from .config import ModelConfig
from .numerics import (
    GradCheckReport,
    Tensor,
    bce_with_logits,
    concatenate,
    fusion_conv_311,
    gelu,
    global_avg_pool,
    grad_check,
    layer_norm,
    linear,
    log,
    matmul,
    sigmoid,
    softmax,
    stack,
    take,
)

F64 = np.float64
GRAD_CONFIG = dict(image_size=32, stage_channels=[8, 16, 32], depths=[1, 1, 1], heads=[2, 4, 8], iscf_hidden=8)


def _t(rng: np.random.Generator, *shape, scale: float = 1.0) -> Tensor:
    return Tensor(scale * rng.standard_normal(shape), dtype=F64)


def _weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Reduce ``out`` to a scalar through fixed random weights."""
    r = Tensor(rng.standard_normal(out.shape), dtype=F64)
    return (out * r).sum()


def _params64(obj, rng: np.random.Generator, scale: float = 0.3) -> list[Tensor]:
    layers.cast(obj, F64)
    layers.randomize(obj, rng, scale)
    return layers.parameters(obj)


def grad_config(**overrides) -> ModelConfig:
    kw = dict(GRAD_CONFIG)
    kw.update(overrides)
    return ModelConfig(**kw)


# each check builds (fn, inputs, max_coords) for one seed ----------------------


def _softmax(rng):
    x = _t(rng, 3, 5)
    axis = int(rng.integers(0, 2))
    r = rng.standard_normal(x.shape)
    return (lambda x: (softmax(x, axis) * Tensor(r)).sum()), [x], None


def _softmax_xent(rng):
    x = _t(rng, 4)
    y = np.eye(4)[rng.integers(0, 4)]
    return (lambda x: -(log(softmax(x, 0)) * Tensor(y)).sum()), [x], None


def _layer_norm(rng):
    x, g, b = _t(rng, 4, 6), _t(rng, 6), _t(rng, 6)
    r = rng.standard_normal((4, 6))
    return (lambda x, g, b: (layer_norm(x, g, b) * Tensor(r)).sum()), [x, g, b], None


def _gelu(rng):
    x = _t(rng, 5, 4, scale=2.0)
    r = rng.standard_normal(x.shape)
    return (lambda x: (gelu(x) * Tensor(r)).sum()), [x], None


def _sigmoid(rng):
    x = _t(rng, 5, 4, scale=2.0)
    r = rng.standard_normal(x.shape)
    return (lambda x: (sigmoid(x) * Tensor(r)).sum()), [x], None


def _linear(rng):
    x, w, b = _t(rng, 2, 3, 4), _t(rng, 4, 5), _t(rng, 5)
    r = rng.standard_normal((2, 3, 5))
    return (lambda x, w, b: (linear(x, w, b) * Tensor(r)).sum()), [x, w, b], None


def _layout(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 2, 3, 2)
    r = rng.standard_normal((4, 6, 2))

    def fn(a, b):
        x = concatenate([a, b], axis=-1).transpose(2, 1, 0).reshape(6, 3, 2)
        y = stack([take(x, 0, axis=1), take(x, 2, axis=1)], axis=0)  # (2, 6, 2)
        z = matmul(y.transpose(1, 0, 2), Tensor(np.ones((2, 2)))) * 0.5  # (6, 2, 2)
        return (z.reshape(4, 6, 1) * Tensor(r)).sum() + y.mean()

    return fn, [a, b], None


def _fusion_conv(rng):
    s, w, b = _t(rng, 2, 3, 2, 3, 3), _t(rng, 3), _t(rng, 1)
    r = rng.standard_normal((2, 2, 3, 3))
    return (lambda s, w, b: (fusion_conv_311(s, w, b) * Tensor(r)).sum()), [s, w, b], None


def _global_pool(rng):
    x = _t(rng, 3, 4, 5)
    return (lambda x: global_avg_pool(x) * global_avg_pool(x) + global_avg_pool(x, 1).sum()), [x], None


def _bce(rng):
    z = _t(rng, 3, 4, scale=3.0)
    y = (rng.random((3, 4)) < 0.5).astype(F64)
    return (lambda z: bce_with_logits(z, y)), [z], None


def _efficient_attention(rng):
    q, k, v = _t(rng, 3, 4), _t(rng, 3, 4), _t(rng, 3, 4)
    r = rng.standard_normal((3, 4))
    return (lambda q, k, v: (attention.efficient_attention(q, k, v) * Tensor(r)).sum()), [q, k, v], None


def _mh_attention(rng):
    p = attention.init_attention(rng, 8, 2)
    x = _t(rng, 2, 5, 8)
    ps = _params64(p, rng)
    r = rng.standard_normal((2, 5, 8))
    return (lambda x, *_: (attention.multi_head_efficient_attention(x, p) * Tensor(r)).sum()), [x, *ps], None


def _transformer_block(rng):
    p = attention.init_block(rng, 4, 2)
    x = _t(rng, 3, 4)
    ps = _params64(p, rng)
    r = rng.standard_normal((3, 4))

    def fn(x, *_):
        y, a = attention.transformer_block(x, p)
        return (y * Tensor(r)).sum() + (a * a).sum()

    return fn, [x, *ps], None


def _patch_embed(rng):
    cfg = grad_config(image_size=16, patch_size=2)
    p = encoder.init_encoder(rng, cfg).embed
    ps = _params64(p, rng)
    img = Tensor(rng.random((1, 3, 16, 16)), dtype=F64)
    r = rng.standard_normal((1, 64, 8))
    return (lambda *_: (encoder.patch_embed(img, p, cfg) * Tensor(r)).sum()), ps, 12


def _patch_merge(rng):
    p = encoder.MergeParams(layers.init_norm(16), layers.init_affine(rng, 16, 8, bias=False))
    x = _t(rng, 1, 16, 4)
    ps = _params64(p, rng)
    r = rng.standard_normal((1, 4, 8))
    return (lambda x, *_: (encoder.patch_merge(x, (4, 4), p) * Tensor(r)).sum()), [x, *ps], None


def _patch_expand(rng):
    p = decoder.ExpandParams(layers.init_affine(rng, 8, 16, bias=False), layers.init_norm(4))
    x = _t(rng, 1, 4, 8)
    ps = _params64(p, rng)
    r = rng.standard_normal((1, 16, 4))
    return (lambda x, *_: (decoder.patch_expand(x, (2, 2), p) * Tensor(r)).sum()), [x, *ps], None


def _skip_fuse(rng):
    p = layers.init_affine(rng, 8, 4)
    d, s = _t(rng, 1, 5, 4), _t(rng, 1, 5, 4)
    ps = _params64(p, rng)
    r = rng.standard_normal((1, 5, 4))
    return (lambda d, s, *_: (decoder.skip_fuse(d, s, p) * Tensor(r)).sum()), [d, s, *ps], None


def _iscf_setup(rng):
    cfg = grad_config()
    p = iscf.init_iscf(rng, cfg)
    ps = _params64(p, rng)
    attn = [_t(rng, 1, n, c) for n, c in zip(cfg.stage_tokens, cfg.stage_channels)]
    return cfg, p, ps, attn


def _equalize(rng):
    cfg, p, ps, attn = _iscf_setup(rng)
    r = rng.standard_normal((1, cfg.stage_tokens[2], cfg.stage_channels[2]))

    def fn(a1, a2, *_):
        return (iscf.equalize(a1, 1, p, cfg) * Tensor(r)).sum() + (iscf.equalize(a2, 2, p, cfg) * Tensor(r)).sum()

    return fn, [attn[0], attn[1], *ps], 24


def _compute_gates(rng):
    cfg, p, ps, _ = _iscf_setup(rng)
    maps = [_t(rng, 2, 4, 32, scale=1.0) + float(rng.standard_normal()) for _ in range(3)]
    r = rng.standard_normal((2, 3))
    return (lambda m1, m2, m3, *_: (iscf.compute_gates([m1, m2, m3], p) * Tensor(r)).sum()), [*maps, *ps], 24


def _fuse(rng):
    cfg, p, ps, _ = _iscf_setup(rng)
    maps = [_t(rng, 1, 4, 32) for _ in range(3)]
    gates = Tensor(rng.random((1, 3)), dtype=F64)
    r = rng.standard_normal((1, 4, 32))
    return (lambda m1, m2, m3, g, *_: (iscf.fuse([m1, m2, m3], g, p, cfg) * Tensor(r)).sum()), [*maps, gates, *ps], 24


def _remap(rng):
    cfg, p, ps, _ = _iscf_setup(rng)
    fused = _t(rng, 1, 4, 32)
    rs = [rng.standard_normal((1, n, c)) for n, c in zip(cfg.stage_tokens, cfg.stage_channels)]

    def fn(f, *_):
        out = iscf.remap(f, p, cfg)
        return sum(((o * Tensor(r)).sum() for o, r in zip(out, rs)), Tensor(0.0, dtype=F64))

    return fn, [fused, *ps], 24


def _iscf_forward(rng):
    cfg, p, ps, attn = _iscf_setup(rng)
    rs = [rng.standard_normal(a.shape) for a in attn]

    def fn(a1, a2, a3, *_):
        out = iscf.iscf_forward([a1, a2, a3], p, cfg)
        return sum(((o * Tensor(r)).sum() for o, r in zip(out, rs)), Tensor(0.0, dtype=F64))

    return fn, [*attn, *ps], 8


def _end_to_end(rng):
    cfg = grad_config()
    p = decoder.init_params(cfg, seed=int(rng.integers(1 << 31)))
    ps = _params64(p, rng, scale=0.1)
    img = Tensor(rng.random((1, 3, cfg.image_size, cfg.image_size)), dtype=F64)
    mask = (rng.random((1, 1, cfg.image_size, cfg.image_size)) < 0.3).astype(F64)

    def fn(*_):
        _, logits = decoder.forward(img, cfg, p)
        return bce_with_logits(logits, mask)

    return fn, ps, 1


CHECKS: dict[str, Callable] = {
    "softmax": _softmax,
    "softmax_cross_entropy": _softmax_xent,
    "layer_norm": _layer_norm,
    "gelu": _gelu,
    "sigmoid": _sigmoid,
    "linear": _linear,
    "layout": _layout,
    "fusion_conv_311": _fusion_conv,
    "global_avg_pool": _global_pool,
    "bce_loss": _bce,
    "efficient_attention": _efficient_attention,
    "multi_head_efficient_attention": _mh_attention,
    "transformer_block": _transformer_block,
    "patch_embed": _patch_embed,
    "patch_merge": _patch_merge,
    "patch_expand": _patch_expand,
    "skip_fuse": _skip_fuse,
    "equalize": _equalize,
    "compute_gates": _compute_gates,
    "fuse": _fuse,
    "remap": _remap,
    "iscf_forward": _iscf_forward,
    "end_to_end": _end_to_end,
}


@dataclass
class SuiteResult:
    name: str
    worst: float
    seeds: int
    passed: bool
    seconds: float


def run_check(name: str, seeds: int = 20, tol: float = 1e-4) -> SuiteResult:
    build = CHECKS[name]
    worst = 0.0
    t0 = time.perf_counter()
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        fn, inputs, max_coords = build(rng)
        report: GradCheckReport = grad_check(fn, inputs, tol=tol, max_coords=max_coords, rng=rng)
        worst = max(worst, report.max_rel_error)
    return SuiteResult(name, worst, seeds, worst <= tol, time.perf_counter() - t0)


def run_suite(scope: str = "full", seeds: int = 20, tol: float = 1e-4) -> list[SuiteResult]:
    if scope == "full":
        names = list(CHECKS)
    elif scope in CHECKS:
        names = [scope]
    else:
        raise KeyError(f"unknown gradcheck scope {scope!r}; choose 'full' or one of: {', '.join(CHECKS)}")
    return [run_check(n, seeds, tol) for n in names]
