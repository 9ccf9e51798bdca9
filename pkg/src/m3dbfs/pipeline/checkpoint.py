"""
Binary checkpoint format (little-endian)::

    magic      4 bytes  b"M3DB"
    version    u32
    stage      u8       1, 2 or 3
    count      u32
    count x record:
        name_len u32, name (UTF-8), frozen u8, rank u32, extents u32 * rank,
        values   float64 * prod(extents), row-major
    config_len u32, config (UTF-8 JSON, sorted keys)

The trailing config block echoes the settings the model was built with.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, StageError

MAGIC = b"M3DB"
VERSION = 1


@dataclass(eq=False)
class Checkpoint:
    stage: int
    tensors: "OrderedDict[str, np.ndarray]"
    frozen: dict
    config: dict = field(default_factory=dict)
    version: int = VERSION
    history: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise CheckpointError(f"stage tag must be 1, 2 or 3, got {self.stage}")
        self.tensors = OrderedDict(self.tensors)
        missing = set(self.tensors) - set(self.frozen)
        for name in missing:
            self.frozen[name] = False

    @classmethod
    def from_module(cls, stage: int, module, config: dict, history=None) -> "Checkpoint":
        tensors = OrderedDict()
        frozen = {}
        for name, p in module.named_parameters():
            tensors[name] = p.data.copy()
            frozen[name] = bool(p.frozen)
        return cls(stage, tensors, frozen, dict(config), history=list(history or []))

    def subset(self, prefix: str) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(
            (name[len(prefix):], v) for name, v in self.tensors.items() if name.startswith(prefix)
        )

    def require_stage(self, stage: int) -> "Checkpoint":
        if self.stage != stage:
            raise StageError(f"expected a stage-{stage} checkpoint, got stage {self.stage}")
        return self

    def same_values(self, other: "Checkpoint") -> bool:
        return list(self.tensors) == list(other.tensors) and all(
            np.array_equal(a, other.tensors[n]) for n, a in self.tensors.items()
        )


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    out = [MAGIC, struct.pack("<IBI", ckpt.version, ckpt.stage, len(ckpt.tensors))]
    for name, values in ckpt.tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(values, dtype="<f8", order="C")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BI", int(bool(ckpt.frozen.get(name, False))), arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    out.append(struct.pack("<I", len(cfg)))
    out.append(cfg)
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"{self.source}: truncated {what} at offset {self.pos} "
                f"(need {n} bytes, {len(self.buf) - self.pos} left)"
            )
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(buf, source)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r} at offset 0")
    version, stage, count = r.unpack("<IBI", "header")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version}")
    if stage not in (1, 2, 3):
        raise CheckpointError(f"{source}: bad stage tag {stage} at offset 8")
    tensors = OrderedDict()
    frozen = {}
    for i in range(count):
        at = r.pos
        (name_len,) = r.unpack("<I", f"name length of record {i}")
        if name_len > len(buf) - r.pos:
            raise CheckpointError(f"{source}: record {i} name length {name_len} overruns file at offset {at}")
        try:
            name = r.take(name_len, f"name of record {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{source}: record {i} name is not UTF-8 (offset {at})") from None
        if name in tensors:
            raise CheckpointError(f"{source}: duplicate record name {name!r} at offset {at}")
        flag, rank = r.unpack("<BI", f"flags of record {name!r}")
        extents = r.unpack(f"<{rank}I", f"extents of record {name!r}") if rank else ()
        n_values = int(np.prod(extents)) if rank else 1
        raw = r.take(8 * n_values, f"values of record {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(extents)
        frozen[name] = bool(flag)
    (cfg_len,) = r.unpack("<I", "config length")
    try:
        config = json.loads(r.take(cfg_len, "config").decode("utf-8")) if cfg_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: unreadable config block: {exc}") from None
    if r.pos != len(buf):
        raise CheckpointError(f"{source}: {len(buf) - r.pos} trailing bytes at offset {r.pos}")
    return Checkpoint(stage, tensors, frozen, config, version)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(ckpt))
    return path


def load_checkpoint(path, expected_stage: int | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    ckpt = decode_checkpoint(path.read_bytes(), str(path))
    if expected_stage is not None:
        ckpt.require_stage(expected_stage)
    return ckpt
