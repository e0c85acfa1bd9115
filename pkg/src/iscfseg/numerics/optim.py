from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    """Moment estimates for one parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: Tensor | np.ndarray, **hyper) -> "AdamState":
        data = param.data if isinstance(param, Tensor) else np.asarray(param)
        return cls(m=np.zeros_like(data), v=np.zeros_like(data), **hyper)


def adam_step(param: Tensor, grad: np.ndarray, state: AdamState) -> None:
    """Apply one bias-corrected Adam update to ``param`` in place."""
    g = np.asarray(grad)
    if g.shape != param.shape:
        raise ValueError(f"adam_step: grad shape {g.shape} does not match param {param.shape}")
    if state.m.shape != param.shape or state.v.shape != param.shape:
        raise ValueError("adam_step: moment shapes do not match the parameter")
    if state.step < 0:
        raise ValueError("adam_step: negative step count")
    dt = param.dtype
    b1, b2 = state.beta1, state.beta2
    state.step += 1
    t = state.step
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    m_hat = state.m / (1.0 - b1**t)
    v_hat = state.v / (1.0 - b2**t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    param.data -= update.astype(dt, copy=False)


@dataclass
class Adam:
    """Adam over a fixed, ordered list of parameters."""

    params: list[Tensor]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: list[AdamState] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.params = list(self.params)
        if not self.states:
            self.states = [
                AdamState.zeros_like(p, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
                for p in self.params
            ]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p, g, s)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
