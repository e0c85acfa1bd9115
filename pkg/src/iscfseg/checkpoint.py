"""Binary checkpoint container.

Layout::

    b"ISCFCKPT"                 8-byte magic
    uint64 little-endian        header length in bytes
    header                      UTF-8 JSON: config, run, split_seed, epoch,
                                best_val_dsc and the tensor manifest
    blob                        little-endian float32 tensors, back to back

Each manifest entry holds ``name``, ``dtype`` ("<f4"), ``shape`` and
``offset`` (bytes from the start of the blob).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config import ModelConfig
from .decoder import NetParams, init_params
from .layers import named_parameters

MAGIC = b"ISCFCKPT"
_DTYPE = "<f4"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: NetParams
    split_seed: int = 0
    epoch: int = 0
    best_val_dsc: float = float("nan")
    run: dict[str, Any] = field(default_factory=dict)

    def copy(self) -> "Checkpoint":
        params = init_params(self.config)
        src = dict(named_parameters(self.params))
        for name, t in named_parameters(params):
            t.data = src[name].data.copy()
        return Checkpoint(self.config, params, self.split_seed, self.epoch, self.best_val_dsc, dict(self.run))


def to_bytes(ckpt: Checkpoint) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, t in named_parameters(ckpt.params):
        raw = np.ascontiguousarray(t.data, dtype=_DTYPE).tobytes()
        manifest.append({"name": name, "dtype": _DTYPE, "shape": list(t.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": ckpt.config.to_dict(),
        "run": ckpt.run,
        "split_seed": ckpt.split_seed,
        "epoch": ckpt.epoch,
        "best_val_dsc": None if np.isnan(ckpt.best_val_dsc) else ckpt.best_val_dsc,
        "tensors": manifest,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(chunks)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    start = len(MAGIC) + 8
    if len(buf) < start:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack_from("<Q", buf, len(MAGIC))
    try:
        header = json.loads(bytes(buf[start : start + hlen]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    blob = memoryview(buf)[start + hlen :]
    config = ModelConfig.from_dict(header["config"])
    params = init_params(config)
    slots = dict(named_parameters(params))
    stored = {e["name"]: e for e in header["tensors"]}
    if set(stored) != set(slots):
        missing = sorted(set(slots) - set(stored))
        extra = sorted(set(stored) - set(slots))
        raise CheckpointError(f"tensor manifest mismatch; missing={missing[:5]} unexpected={extra[:5]}")
    for name, t in slots.items():
        e = stored[name]
        shape = tuple(e["shape"])
        if shape != t.shape or e["dtype"] != _DTYPE:
            raise CheckpointError(f"{name}: stored {e['dtype']}{shape}, expected {_DTYPE}{t.shape}")
        n = int(np.prod(shape))
        if e["offset"] + 4 * n > len(blob):
            raise CheckpointError(f"{name}: tensor data truncated")
        t.data = np.frombuffer(blob, dtype=_DTYPE, count=n, offset=e["offset"]).astype(np.float32).reshape(shape)
    best = header.get("best_val_dsc")
    return Checkpoint(
        config=config,
        params=params,
        split_seed=header.get("split_seed", 0),
        epoch=header.get("epoch", 0),
        best_val_dsc=float("nan") if best is None else float(best),
        run=header.get("run", {}),
    )


def save(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
