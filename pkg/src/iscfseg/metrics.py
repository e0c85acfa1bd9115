"""Pixel confusion counts and the DSC / SE / SP / ACC metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(probs, mask, threshold: float = 0.5) -> ConfusionCounts:
    probs = np.asarray(probs)
    mask = np.asarray(mask)
    if probs.shape != mask.shape:
        raise ValueError(f"confusion: prediction {probs.shape} and mask {mask.shape} differ")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("confusion: mask must be binary")
    pred = probs >= threshold
    gt = mask.astype(bool)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(pred.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> float:
    # empty class: nothing to find and nothing found counts as perfect
    return 1.0 if den == 0 else num / den


def metrics(c: ConfusionCounts) -> tuple[float, float, float, float]:
    """Return (DSC, SE, SP, ACC)."""
    dsc = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    se = _ratio(c.tp, c.tp + c.fn)
    sp = _ratio(c.tn, c.tn + c.fp)
    acc = _ratio(c.tp + c.tn, c.total)
    return dsc, se, sp, acc


METRIC_NAMES = ("dsc", "se", "sp", "acc")


@dataclass
class MetricsReport:
    per_image: list[dict] = field(default_factory=list)

    def add(self, sample_id: str, counts: ConfusionCounts) -> None:
        row = {"id": sample_id}
        row.update(dict(zip(METRIC_NAMES, metrics(counts))))
        self.per_image.append(row)

    def mean(self, name: str) -> float:
        if not self.per_image:
            return float("nan")
        return float(np.mean([r[name] for r in self.per_image]))

    @property
    def mean_dsc(self) -> float:
        return self.mean("dsc")

    @property
    def mean_se(self) -> float:
        return self.mean("se")

    @property
    def mean_sp(self) -> float:
        return self.mean("sp")

    @property
    def mean_acc(self) -> float:
        return self.mean("acc")

    def to_dict(self) -> dict:
        rows = sorted(self.per_image, key=lambda r: r["id"])
        return {
            "mean_dsc": self.mean_dsc,
            "mean_se": self.mean_se,
            "mean_sp": self.mean_sp,
            "mean_acc": self.mean_acc,
            "per_image": rows,
        }
