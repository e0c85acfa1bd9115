"""Parameter containers shared by the network modules."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .numerics import Tensor, layer_norm, linear

DTYPE = np.float32


@dataclass
class Affine:
    weight: Tensor  # (in, out)
    bias: Tensor | None = None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]


@dataclass
class Norm:
    gamma: Tensor
    beta: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


def init_affine(rng: np.random.Generator, fan_in: int, fan_out: int, bias: bool = True) -> Affine:
    """Glorot-uniform weights, zero bias."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(DTYPE)
    b = Tensor(np.zeros(fan_out, dtype=DTYPE)) if bias else None
    return Affine(Tensor(w), b)


def zero_affine(fan_in: int, fan_out: int, bias: bool = True) -> Affine:
    b = Tensor(np.zeros(fan_out, dtype=DTYPE)) if bias else None
    return Affine(Tensor(np.zeros((fan_in, fan_out), dtype=DTYPE)), b)


def init_norm(dim: int) -> Norm:
    return Norm(Tensor(np.ones(dim, dtype=DTYPE)), Tensor(np.zeros(dim, dtype=DTYPE)))


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses/lists and yield ``(dotted_name, tensor)`` in a fixed order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            if f.metadata.get("static"):
                continue
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_parameters(getattr(obj, f.name), name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))


def parameters(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj)]


def count(obj) -> int:
    return sum(t.size for _, t in named_parameters(obj))


def cast(obj, dtype) -> None:
    """Convert every parameter of ``obj`` to ``dtype`` in place."""
    for _, t in named_parameters(obj):
        t.data = t.data.astype(dtype)
        t.grad = None


def randomize(obj, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Overwrite every parameter with Gaussian noise (grad-check helper)."""
    for _, t in named_parameters(obj):
        t.data = (t.data + scale * rng.standard_normal(t.shape)).astype(t.dtype)
