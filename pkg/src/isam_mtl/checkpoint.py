"""``ISAMCKPT`` parameter files.

Layout (little-endian)::

    b"ISAMCKPT" | u32 version | u32 count
    count x ( u32 name_len | name utf-8 | u32 ndim | ndim x u32 dim | prod(dims) x f32 )
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"ISAMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("checkpoint truncated")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return out


def save_checkpoint(path: str | os.PathLike, params: Mapping[str, np.ndarray]) -> None:
    from .fileio import atomic_write_bytes

    atomic_write_bytes(path, encode_checkpoint(params))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
