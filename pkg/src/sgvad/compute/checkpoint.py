"""Binary tensor container used for training checkpoints and inference exports.

Layout (little-endian): magic ``SGVD``, u32 version, u32 tensor count, then
per tensor: u32 name length, UTF-8 name, u32 rank, rank x u32 dims, float32
data in C order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptFile

MAGIC = b"SGVD"
VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CorruptFile(f"{path}: not a checkpoint (magic {data[:4]!r})")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CorruptFile(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise CorruptFile(f"{path}: tensor {name!r} truncated")
            out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise CorruptFile(f"{path}: truncated") from exc
    return out
