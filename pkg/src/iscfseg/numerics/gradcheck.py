"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tol: float = 1e-4,
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare ``backward()`` gradients of scalar ``fn(*inputs)`` with central differences.

    Inputs must be float64. When ``max_coords`` is set, at most that many
    randomly chosen entries of each input are perturbed (the analytic
    gradient is still computed in full).

    The relative error of an entry is ``|a - n| / max(|a|, |n|, floor')``
    where ``floor'`` is ``floor`` raised to the round-off resolution of the
    difference quotient, ``eps * max(1, |f|) / (h * tol)``; gradients smaller
    than that cannot be resolved by finite differences at step ``h``.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check requires float64 inputs")
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    if out.size != 1:
        raise ValueError(f"grad_check: computation must be scalar-valued, got shape {out.shape}")
    out.backward()
    resolution = np.finfo(np.float64).eps * max(1.0, abs(out.item())) / (h * tol)
    floor = max(floor, resolution)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = rng or np.random.default_rng(0)
    per_input: list[float] = []
    checked = 0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(coords.size)
        for k, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*inputs).item()
            flat[i] = orig - h
            fm = fn(*inputs).item()
            flat[i] = orig
            numeric[k] = (fp - fm) / (2.0 * h)
        err = relative_error(a.reshape(-1)[coords], numeric, floor)
        per_input.append(float(err.max()) if err.size else 0.0)
        checked += coords.size
    for t in inputs:
        t.grad = None
    return GradCheckReport(max(per_input, default=0.0), tol, checked, per_input)
