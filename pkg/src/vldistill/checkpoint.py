"""Binary tensor container ("DCKP").

Layout, all little-endian:

    magic   4 bytes  b"DCKP"
    version u32
    count   u32
    entries, each:
        name_len u16, name UTF-8
        rank     u8
        dims     u64 per axis
        values   f64 per element, row-major
    meta_len u32, metadata UTF-8 JSON

Round trips are bit-exact; malformed files fail cleanly before any entry
is handed back.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError

MAGIC = b"DCKP"
VERSION = 1


@dataclass
class Checkpoint:
    version: int
    tensors: dict[str, np.ndarray]
    meta: dict


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write named float64 arrays plus a JSON metadata blob."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<Q", dim)
        blob += arr.tobytes()
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    with open(path, "wb") as f:
        f.write(bytes(blob))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint truncated")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def load_checkpoint(path) -> Checkpoint:
    """Parse a DCKP file; raises CheckpointError on any malformation."""
    with open(path, "rb") as f:
        raw = f.read()
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"bad magic in {path}: not a DCKP checkpoint")
    version = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    count = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        rank = r.unpack("<B")
        dims = tuple(r.unpack("<Q") for _ in range(rank))
        n_values = 1
        for dim in dims:
            n_values *= dim
        values = np.frombuffer(r.take(8 * n_values), dtype="<f8").reshape(dims)
        tensors[name] = values.astype(np.float64).copy()
    meta_len = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes after metadata")
    return Checkpoint(version=version, tensors=tensors, meta=meta)
