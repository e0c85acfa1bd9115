"""Training loop and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .config import ConfigError, ModelConfig
from .data import Sample, batches, fisher_yates
from .decoder import NetParams, forward, init_params
from .layers import parameters
from .metrics import MetricsReport, confusion
from .numerics import Adam, NumericError, Tensor, bce_with_logits

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The loss became non-finite."""


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    epoch_log: list[tuple[int, float, float]] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def _check_geometry(config: ModelConfig, samples: Sequence[Sample]) -> None:
    s = config.image_size
    for smp in samples:
        if smp.image.shape[1:] != (s, s):
            raise ConfigError(f"sample {smp.id} is {smp.image.shape[1:]}, model expects {s}x{s}")


def predict(params: NetParams, config: ModelConfig, images: np.ndarray) -> np.ndarray:
    probs, _ = forward(images, config, params)
    return probs.data


def evaluate_params(
    params: NetParams,
    config: ModelConfig,
    samples: Sequence[Sample],
    threshold: float = 0.5,
    batch_size: int = 8,
) -> MetricsReport:
    _check_geometry(config, samples)
    report = MetricsReport()
    ordered = sorted(samples, key=lambda s: s.id)
    for images, masks, ids in batches(ordered, batch_size):
        probs = predict(params, config, images)
        for i, sid in enumerate(ids):
            report.add(sid, confusion(probs[i], masks[i], threshold))
    return report


def evaluate(ckpt: Checkpoint, samples: Sequence[Sample], threshold: float = 0.5, batch_size: int = 8) -> MetricsReport:
    return evaluate_params(ckpt.params, ckpt.config, samples, threshold, batch_size)


def _epoch_seed(seed: int, epoch: int) -> int:
    return seed * 1_000_003 + epoch


def train(
    config: ModelConfig,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample] = (),
    *,
    split_seed: int = 0,
    max_steps: int | None = None,
    log_path: str | Path | None = None,
    run: dict | None = None,
    threshold: float = 0.5,
) -> TrainResult:
    """Adam on mean BCE over logits; keeps the best-validation and last checkpoints.

    When ``val_set`` is empty the training set stands in for validation.
    """
    if not train_set:
        raise ValueError("training split is empty")
    _check_geometry(config, train_set)
    _check_geometry(config, val_set)
    selection = list(val_set) if len(val_set) else list(train_set)

    params = init_params(config)
    plist = parameters(params)
    opt = Adam(plist, lr=config.lr)
    for p in plist:
        p.requires_grad = True

    def snapshot(epoch: int, score: float) -> Checkpoint:
        return Checkpoint(config, params, split_seed, epoch, score, dict(run or {})).copy()

    log_file = open(log_path, "w") if log_path is not None else None
    try:
        score = evaluate_params(params, config, selection, threshold).mean_dsc
        best = snapshot(0, score)
        result = TrainResult(best=best, last=best.copy())
        step = 0
        train_list = list(train_set)
        for epoch in range(1, config.epochs + 1):
            if max_steps is not None and step >= max_steps:
                break
            order = fisher_yates(list(range(len(train_list))), _epoch_seed(config.seed, epoch))
            epoch_losses = []
            for images, masks, _ in batches([train_list[i] for i in order], config.batch_size):
                if max_steps is not None and step >= max_steps:
                    break
                step += 1
                opt.zero_grad()
                try:
                    _, logits = forward(images, config, params)
                    loss = bce_with_logits(logits, masks)
                except NumericError as exc:
                    raise DivergenceError(f"non-finite values at step {step} (epoch {epoch}): {exc}") from exc
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergenceError(f"non-finite loss at step {step} (epoch {epoch})")
                loss.backward()
                opt.step()
                epoch_losses.append(value)
                result.step_losses.append(value)
            mean_loss = float(np.mean(epoch_losses))
            try:
                score = evaluate_params(params, config, selection, threshold).mean_dsc
            except NumericError as exc:
                raise DivergenceError(f"non-finite values evaluating after step {step} (epoch {epoch}): {exc}") from exc
            result.epoch_log.append((epoch, mean_loss, score))
            log.info("epoch %d loss %.6f val_dsc %.4f", epoch, mean_loss, score)
            if log_file is not None:
                log_file.write(f"{epoch},{mean_loss:.8f},{score:.8f}\n")
                log_file.flush()
            if score > best.best_val_dsc:
                best = snapshot(epoch, score)
            result.best = best
            result.last = snapshot(epoch, best.best_val_dsc)
    finally:
        if log_file is not None:
            log_file.close()
    for p in plist:
        p.requires_grad = False
        p.grad = None
    return result


def loss_for(params: NetParams, config: ModelConfig, images: np.ndarray, masks: np.ndarray) -> Tensor:
    _, logits = forward(images, config, params)
    return bce_with_logits(logits, masks)
