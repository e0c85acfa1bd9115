"""Shared checks used by several test modules and the acceptance suite."""

import math

import numpy as np

from iscfseg import ModelConfig, forward, init_params
from iscfseg.decoder import decode, patch_expand
from iscfseg.encoder import encode
from iscfseg.iscf import compute_gates, equalize, fuse, remap


def loop_oracle(q, k, v):
    """Dense evaluation of rho_q(Q) rho_k(K)^T V with explicit loops."""
    n, d = len(q), len(q[0])
    rq = []
    for row in q:
        e = [math.exp(x - max(row)) for x in row]
        rq.append([x / sum(e) for x in e])
    rk = [[0.0] * d for _ in range(n)]
    for j in range(d):
        col = [k[i][j] for i in range(n)]
        e = [math.exp(x - max(col)) for x in col]
        for i in range(n):
            rk[i][j] = e[i] / sum(e)
    out = [[0.0] * d for _ in range(n)]
    for a in range(n):
        for b in range(n):
            w = sum(rq[a][i] * rk[b][i] for i in range(d))
            for j in range(d):
                out[a][j] += w * v[b][j]
    return np.array(out)


def random_valid_config(rng: np.random.Generator, **overrides) -> ModelConfig:
    c1 = int(rng.choice([4, 8, 12, 16]))
    heads = []
    for c in (c1, 2 * c1, 4 * c1):
        divisors = [h for h in (1, 2, 4, 8) if c % h == 0]
        heads.append(int(rng.choice(divisors)))
    patch = int(rng.choice([2, 4]))
    kw = dict(
        image_size=patch * 4 * int(rng.integers(1, 5)),
        patch_size=patch,
        stage_channels=[c1, 2 * c1, 4 * c1],
        depths=[int(d) for d in rng.integers(1, 3, size=3)],
        heads=heads,
        mlp_ratio=int(rng.choice([2, 4])),
        iscf_enabled=True,
        iscf_hidden=int(rng.choice([4, 8])),
        seed=int(rng.integers(1000)),
    )
    kw.update(overrides)
    return ModelConfig(**kw)


def shape_chain_violations(config: ModelConfig, batch: int = 2, seed: int = 0) -> list[str]:
    """Run every stage of the network and list any broken shape invariant."""
    rng = np.random.default_rng(seed)
    params = init_params(config)
    s = config.image_size
    images = rng.random((batch, 3, s, s)).astype(np.float32)
    bad = []
    n1 = (s // config.patch_size) ** 2
    expect_n = [n1, n1 // 4, n1 // 16]
    bundle = encode(images, config, params.encoder)
    for i, (f, a, (h, w)) in enumerate(zip(bundle.features, bundle.attention, bundle.dims)):
        want = (batch, expect_n[i], config.stage_channels[i])
        if f.shape != want or a.shape != want:
            bad.append(f"stage {i + 1}: F {f.shape} A {a.shape}, want {want}")
        if h * w != expect_n[i]:
            bad.append(f"stage {i + 1}: dims {h}x{w} do not give {expect_n[i]} tokens")
    n3, c3 = expect_n[2], config.stage_channels[2]
    maps = [equalize(a, i + 1, params.iscf, config) for i, a in enumerate(bundle.attention)]
    for i, m in enumerate(maps):
        if m.shape != (batch, n3, c3):
            bad.append(f"equalize {i + 1}: {m.shape}")
    gates = compute_gates(maps, params.iscf)
    if gates.shape != (batch, 3) or not np.all((gates.data > 0) & (gates.data < 1)):
        bad.append(f"gates {gates.shape} out of shape or range")
    fused = fuse(maps, gates, params.iscf, config)
    if fused.shape != (batch, n3, c3):
        bad.append(f"fused {fused.shape}")
    for i, (r, f) in enumerate(zip(remap(fused, params.iscf, config), bundle.features)):
        if r.shape != f.shape:
            bad.append(f"remap {i + 1}: {r.shape} vs {f.shape}")
    up = patch_expand(bundle.features[2], bundle.dims[2], params.decoder.expands[1])
    if up.shape != bundle.features[1].shape:
        bad.append(f"expand 3->2: {up.shape}")
    up = patch_expand(bundle.features[1], bundle.dims[1], params.decoder.expands[0])
    if up.shape != bundle.features[0].shape:
        bad.append(f"expand 2->1: {up.shape}")
    logits = decode(bundle.features, config, params.decoder)
    if logits.shape != (batch, 1, s, s):
        bad.append(f"head {logits.shape}")
    probs, _ = forward(images, config, params)
    if probs.shape != (batch, 1, s, s) or not np.all((probs.data > 0) & (probs.data < 1)):
        bad.append("probabilities out of shape or outside (0, 1)")
    return bad


# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE: list[str] = []
