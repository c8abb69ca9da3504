"""Flat binary parameter container.

Layout (all integers little-endian u32)::

    b"IAUNETCK" | version | count | count x record
    record = name_len | utf-8 name | rank | dims[rank] | f64 payload (LE)
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"IAUNETCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * size > len(blob):
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return out
