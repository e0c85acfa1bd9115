"""Runtime scaling of efficient attention against a dense quadratic reference."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import dense_oracle_attention, dense_softmax_attention, efficient_attention_array

DENSE_VARIANTS: dict[str, Callable] = {
    "softmax": dense_softmax_attention,
    "oracle": dense_oracle_attention,
}


@dataclass
class BenchRow:
    tokens: int
    median_efficient_s: float
    median_dense_s: float


def _median_time(fn: Callable, args: tuple, repeats: int, min_sample_s: float = 5e-3) -> float:
    """Median per-call time; fast calls are looped so each sample spans ``min_sample_s``."""
    t0 = time.perf_counter()
    fn(*args)  # warm-up, also sizes the inner loop
    once = time.perf_counter() - t0
    inner = max(1, int(np.ceil(min_sample_s / max(once, 1e-9))))
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        times.append((time.perf_counter() - t0) / inner)
    return float(np.median(times))


def sanity_check(dim: int, seed: int = 0, tokens: int = 64) -> float:
    """Max abs difference between efficient attention and its materialised-map oracle."""
    rng = np.random.default_rng(seed)
    q, k, v = (rng.standard_normal((tokens, dim)) for _ in range(3))
    return float(np.max(np.abs(efficient_attention_array(q, k, v) - dense_oracle_attention(q, k, v))))


def bench_attention(
    tokens: Sequence[int],
    dim: int = 64,
    repeats: int = 9,
    dense: str = "softmax",
    seed: int = 0,
) -> list[BenchRow]:
    """Median single-threaded runtimes for each token count."""
    if any(n < 64 for n in tokens):
        raise ValueError("token counts must be at least 64")
    if repeats < 1:
        raise ValueError("repeats must be positive")
    dense_fn = DENSE_VARIANTS[dense]
    rng = np.random.default_rng(seed)
    rows = []
    with threadpool_limits(limits=1):
        for n in tokens:
            q, k, v = (rng.standard_normal((n, dim)).astype(np.float32) for _ in range(3))
            rows.append(
                BenchRow(
                    n,
                    _median_time(efficient_attention_array, (q, k, v), repeats),
                    _median_time(dense_fn, (q, k, v), repeats),
                )
            )
    return rows


def growth_factors(rows: Sequence[BenchRow]) -> list[tuple[int, int, float, float]]:
    """(N_prev, N, efficient ratio, dense ratio) for consecutive rows."""
    return [
        (a.tokens, b.tokens, b.median_efficient_s / a.median_efficient_s, b.median_dense_s / a.median_dense_s)
        for a, b in zip(rows, rows[1:])
    ]


def to_csv(rows: Sequence[BenchRow]) -> str:
    lines = ["N,median_efficient_s,median_dense_s"]
    lines += [f"{r.tokens},{r.median_efficient_s:.9f},{r.median_dense_s:.9f}" for r in rows]
    return "\n".join(lines) + "\n"
