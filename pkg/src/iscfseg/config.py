"""Model and run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration."""


@dataclass
class ModelConfig:
    image_size: int = 224
    patch_size: int = 4
    stage_channels: list[int] = field(default_factory=lambda: [128, 256, 512])
    depths: list[int] = field(default_factory=lambda: [2, 2, 4])
    heads: list[int] = field(default_factory=lambda: [2, 4, 8])
    mlp_ratio: int = 4
    iscf_enabled: bool = True
    iscf_hidden: int = 8
    seed: int = 0
    lr: float = 1e-4
    batch_size: int = 24
    epochs: int = 100

    def __post_init__(self) -> None:
        self.stage_channels = list(self.stage_channels)
        self.depths = list(self.depths)
        self.heads = list(self.heads)
        self.validate()

    def validate(self) -> None:
        if len(self.stage_channels) != 3 or len(self.depths) != 3 or len(self.heads) != 3:
            raise ConfigError("stage_channels, depths and heads need exactly three entries")
        if self.patch_size < 1 or self.image_size < 1:
            raise ConfigError("image_size and patch_size must be positive")
        if self.image_size % (self.patch_size * 4):
            raise ConfigError(
                f"image_size {self.image_size} must be divisible by 4*patch_size = {4 * self.patch_size}"
            )
        c1, c2, c3 = self.stage_channels
        if c1 < 1 or c2 != 2 * c1 or c3 != 2 * c2:
            raise ConfigError(f"stage_channels must double per stage, got {self.stage_channels}")
        for c, h in zip(self.stage_channels, self.heads):
            if h < 1 or c % h:
                raise ConfigError(f"heads {h} must divide stage width {c}")
        if any(d < 1 for d in self.depths):
            raise ConfigError("every stage needs at least one block")
        if self.mlp_ratio < 1 or self.iscf_hidden < 1:
            raise ConfigError("mlp_ratio and iscf_hidden must be positive")

    # derived geometry
    @property
    def stage_dims(self) -> list[tuple[int, int]]:
        side = self.image_size // self.patch_size
        return [(side, side), (side // 2, side // 2), (side // 4, side // 4)]

    @property
    def stage_tokens(self) -> list[int]:
        return [h * w for h, w in self.stage_dims]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def desk_config(**overrides) -> ModelConfig:
    """Small configuration used for CPU training and tests."""
    base = dict(
        image_size=64,
        stage_channels=[16, 32, 64],
        depths=[1, 1, 1],
        heads=[2, 4, 8],
        lr=2e-3,
        batch_size=8,
        epochs=200,
    )
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# run configuration (flat JSON)

_RUN_EXTRA = {
    "data_dir": None,
    "out_dir": "runs/default",
    "split_seed": 0,
    "split_counts": None,
    "threshold": 0.5,
    "max_steps": None,
}


@dataclass
class RunConfig:
    model: ModelConfig
    data_dir: str | None = None
    out_dir: str = "runs/default"
    split_seed: int = 0
    split_counts: list[int] | None = None
    threshold: float = 0.5
    max_steps: int | None = None

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(ModelConfig)] + list(_RUN_EXTRA)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        model_keys = {f.name for f in fields(ModelConfig)}
        try:
            model = ModelConfig(**{k: v for k, v in d.items() if k in model_keys})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        extra = {k: d.get(k, default) for k, default in _RUN_EXTRA.items()}
        run = cls(model=model, **extra)
        if run.split_counts is not None and (
            len(run.split_counts) != 3 or any(int(c) < 0 for c in run.split_counts)
        ):
            raise ConfigError("split_counts must be three non-negative integers [train, val, test]")
        if not 0.0 < run.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        return run

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict[str, Any]:
        d = self.model.to_dict()
        d.update({k: getattr(self, k) for k in _RUN_EXTRA})
        return d
