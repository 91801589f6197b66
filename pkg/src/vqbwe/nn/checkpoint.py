"""VQCK checkpoint files: a JSON config block followed by named float32 tensors.

Layout (little-endian)::

    b"VQCK" | u16 version | u32 config_len | config (UTF-8 JSON)
    u32 count | count x (u16 name_len | name | u8 ndim | ndim x u32 | f32 data)
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VQCK"
VERSION = 1


def to_bytes(config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    parts = [struct.pack("<4sHI", MAGIC, VERSION, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            f32 = arr.astype(np.float32)
            if not np.array_equal(f32.astype(arr.dtype), arr):
                raise ValueError(f"tensor {name!r} is not exactly representable in float32")
            arr = f32
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    mv = memoryview(buf)
    try:
        magic, version, clen = struct.unpack_from("<4sHI", mv, 0)
    except struct.error as e:
        raise ValueError("truncated checkpoint header") from e
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = struct.calcsize("<4sHI")
    config = json.loads(bytes(mv[off:off + clen]).decode())
    off += clen
    (count,) = struct.unpack_from("<I", mv, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", mv, off)
        off += 2
        name = bytes(mv[off:off + nlen]).decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", mv, off)
        shape = struct.unpack_from(f"<{ndim}I", mv, off + 1)
        off += 1 + 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        if off + 4 * n > len(mv):
            raise ValueError(f"truncated data for tensor {name!r}")
        tensors[name] = np.frombuffer(mv, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
        off += 4 * n
    if off != len(mv):
        raise ValueError("trailing bytes after last tensor")
    return config, tensors


def save(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(to_bytes(config, tensors))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return from_bytes(Path(path).read_bytes())
