"""Dataset ingestion, deterministic splitting and synthetic lesions."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")
MASK_SUFFIX = "_segmentation.png"
ISIC_SPLIT = (1815, 259, 520)


class IngestionError(RuntimeError):
    """Images and masks on disk do not pair up."""


@dataclass
class Sample:
    id: str
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray  # (1, H, W) uint8 in {0, 1}

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"{self.id}: image must be (3, H, W), got {self.image.shape}")
        if self.mask.shape != (1, *self.image.shape[1:]):
            raise ValueError(f"{self.id}: mask {self.mask.shape} does not match image {self.image.shape}")


# ---------------------------------------------------------------------------
# pinned PRNG and shuffle

_MASK64 = 0xFFFFFFFFFFFFFFFF


class SplitMix64:
    """splitmix64 generator (Steele, Lea & Flood), 64-bit unsigned outputs."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


def fisher_yates(items: list, seed: int) -> list:
    """Shuffle a copy of ``items``.

    Indices run downward: for i = n-1 .. 1, swap i with j = next() mod (i+1).
    """
    out = list(items)
    rng = SplitMix64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.next() % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


@dataclass(frozen=True)
class SplitSpec:
    train: int = ISIC_SPLIT[0]
    val: int = ISIC_SPLIT[1]
    test: int = ISIC_SPLIT[2]
    seed: int = 0

    @property
    def total(self) -> int:
        return self.train + self.val + self.test

    @classmethod
    def proportional(cls, n: int, seed: int = 0) -> "SplitSpec":
        """Scale the 1815/259/520 ISIC proportions to ``n`` samples; test takes the remainder."""
        if n == sum(ISIC_SPLIT):
            return cls(*ISIC_SPLIT, seed=seed)
        total = sum(ISIC_SPLIT)
        train = round(n * ISIC_SPLIT[0] / total)
        val = round(n * ISIC_SPLIT[1] / total)
        if n >= 3:
            # every part keeps at least one sample
            val = max(val, 1)
            train = min(max(train, 1), n - val - 1)
        val = min(val, n - train)
        return cls(train, val, n - train - val, seed)


def split(dataset: Sequence, spec: SplitSpec) -> tuple[list, list, list]:
    """Partition by sorted id, seeded Fisher-Yates, then first/next/last counts."""
    if min(spec.train, spec.val, spec.test) < 0:
        raise ValueError("split counts must be non-negative")
    if spec.total > len(dataset):
        raise ValueError(f"split counts sum to {spec.total} but the dataset holds {len(dataset)} samples")
    if spec.total != len(dataset):
        raise ValueError(
            f"split counts sum to {spec.total}, which does not cover all {len(dataset)} samples; "
            "use SplitSpec.proportional for other dataset sizes"
        )
    ids = [_sample_id(s) for s in dataset]
    if len(set(ids)) != len(ids):
        raise ValueError("dataset ids are not unique")
    by_id = dict(zip(ids, dataset))
    order = fisher_yates(sorted(ids), spec.seed)
    a, b = spec.train, spec.train + spec.val
    return [by_id[i] for i in order[:a]], [by_id[i] for i in order[a:b]], [by_id[i] for i in order[b:]]


def _sample_id(s) -> str:
    return s.id if isinstance(s, Sample) else str(s)


# ---------------------------------------------------------------------------
# disk I/O


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def read_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)[None]


def _index(images_dir: Path, masks_dir: Path) -> tuple[dict[str, Path], dict[str, Path]]:
    images = {p.stem: p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES}
    masks = {p.name[: -len(MASK_SUFFIX)]: p for p in masks_dir.iterdir() if p.name.endswith(MASK_SUFFIX)}
    return images, masks


def load_isic(
    images_dir: str | Path,
    masks_dir: str | Path,
    size: int | None = None,
    workers: int = 1,
) -> list[Sample]:
    """Load ISIC-style image/mask pairs, ordered by id.

    Masks are binarised at 127 on the 8-bit source before any resizing.
    """
    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    for d in (images_dir, masks_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"directory not found: {d}")
    images, masks = _index(images_dir, masks_dir)
    orphans = sorted(set(images) ^ set(masks))
    if orphans:
        raise IngestionError(f"unpaired image/mask ids: {', '.join(orphans)}")
    ids = sorted(images)
    if not ids:
        log.warning("no samples found under %s / %s", images_dir, masks_dir)
        return []

    def load(i: str) -> Sample:
        s = Sample(i, read_image(images[i]), read_mask(masks[i]))
        return resize_sample(s, size) if size is not None else s

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(load, ids))
    return [load(i) for i in ids]


def load_dataset(root: str | Path, size: int | None = None, workers: int = 1) -> list[Sample]:
    root = Path(root)
    return load_isic(root / "images", root / "masks", size=size, workers=workers)


def write_dataset(samples: Sequence[Sample], root: str | Path) -> None:
    """Write samples as PNG pairs in the ``images/``, ``masks/`` layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        img = np.clip(np.round(s.image.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(img, "RGB").save(root / "images" / f"{s.id}.png")
        Image.fromarray(s.mask[0] * 255, "L").save(root / "masks" / f"{s.id}{MASK_SUFFIX}")


def resize_sample(s: Sample, size: int) -> Sample:
    """Bilinear resize for the image, nearest-neighbour for the mask."""
    if size <= 0:
        raise ValueError(f"target size must be positive, got {size}")
    if s.image.shape[1:] == (size, size):
        return s
    chans = [
        np.asarray(Image.fromarray(np.ascontiguousarray(ch, dtype=np.float32), "F").resize((size, size), Image.BILINEAR))
        for ch in s.image
    ]
    image = np.clip(np.stack(chans), 0.0, 1.0).astype(np.float32)
    m = Image.fromarray(s.mask[0] * 255, "L").resize((size, size), Image.NEAREST)
    mask = (np.asarray(m) > 127).astype(np.uint8)[None]
    return Sample(s.id, image, mask)


def batches(samples: Sequence[Sample], batch_size: int) -> Iterator[tuple[np.ndarray, np.ndarray, list[str]]]:
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        yield (
            np.stack([s.image for s in chunk]),
            np.stack([s.mask for s in chunk]),
            [s.id for s in chunk],
        )


# ---------------------------------------------------------------------------
# synthetic lesions

_SKIN = np.array([0.82, 0.62, 0.50])
_LESION = np.array([0.38, 0.24, 0.16])


def _lesion_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 3))):
        cy, cx = rng.uniform(0.25, 0.75, size=2) * size
        a, b = rng.uniform(0.10, 0.28, size=2) * size
        theta = rng.uniform(0, math.pi)
        amp = rng.uniform(0.04, 0.15)
        lobes = int(rng.integers(3, 8))
        phase = rng.uniform(0, 2 * math.pi)
        dy, dx = yy - cy, xx - cx
        u = (dx * math.cos(theta) + dy * math.sin(theta)) / a
        v = (-dx * math.sin(theta) + dy * math.cos(theta)) / b
        r = np.hypot(u, v)
        ang = np.arctan2(v, u)
        mask |= r <= 1.0 + amp * np.sin(lobes * ang + phase)
    return mask


def synth_sample(rng: np.random.Generator, size: int, sample_id: str) -> Sample:
    """One skin-like image with 1-2 dark jittered ellipses; mask is their exact union."""
    for _ in range(100):
        mask = _lesion_mask(rng, size)
        if 0.01 <= mask.mean() <= 0.60:
            break
    else:  # pragma: no cover - the geometry makes this practically unreachable
        raise RuntimeError("could not draw a lesion inside the coverage bounds")
    yy, xx = np.mgrid[0:size, 0:size] / size
    skin = _SKIN + rng.uniform(-0.06, 0.06, size=3)
    tilt = rng.uniform(-0.08, 0.08, size=2)
    background = skin[:, None, None] + (tilt[0] * yy + tilt[1] * xx)[None]
    lesion = _LESION + rng.uniform(-0.05, 0.05, size=3)
    image = np.where(mask[None], lesion[:, None, None], background)
    image = image + rng.normal(0.0, 0.03, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Sample(sample_id, image, mask[None].astype(np.uint8))


def synth_generate(n: int, size: int, seed: int) -> list[Sample]:
    if n < 1:
        raise ValueError("n must be at least 1")
    if size < 16:
        raise ValueError("size must be at least 16")
    rng = np.random.default_rng(seed)
    return [synth_sample(rng, size, f"synth_{i:04d}") for i in range(n)]
