"""Token grids (frames x codebooks of code indices) and their binary file format.

File layout, all little-endian::

    b"VQTG" | version u16 | F u32 | M_cb u32 | K u32 | F*M_cb u32 codes (row-major)

The mask sentinel is stored as ``K``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"VQTG"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")


@dataclass(frozen=True)
class TokenGrid:
    codes: np.ndarray
    K: int
    frame_rate: float | None = None

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2:
            raise ValueError(f"token grid must be 2-D (frames, codebooks), got shape {codes.shape}")
        if not np.issubdtype(codes.dtype, np.integer):
            raise TypeError(f"token codes must be integers, got {codes.dtype}")
        if codes.size and (codes.min() < 0 or codes.max() > self.K):
            raise ValueError(f"codes must lie in [0, {self.K}] (K is the mask sentinel)")
        codes = codes.astype(np.int64)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def mask_index(self) -> int:
        return self.K

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    @property
    def has_mask(self) -> bool:
        return bool(np.any(self.codes == self.K))

    def to_bytes(self) -> bytes:
        F, M = self.codes.shape
        header = _HEADER.pack(MAGIC, VERSION, F, M, self.K)
        return header + self.codes.astype("<u4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes, frame_rate: float | None = None) -> "TokenGrid":
        if len(data) < _HEADER.size:
            raise ValueError("truncated token grid header")
        magic, version, F, M, K = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise ValueError(f"unsupported token grid version {version}")
        body = data[_HEADER.size:]
        if len(body) != 4 * F * M:
            raise ValueError(f"expected {4 * F * M} code bytes, got {len(body)}")
        codes = np.frombuffer(body, dtype="<u4").reshape(F, M).astype(np.int64)
        return cls(codes=codes, K=K, frame_rate=frame_rate)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, frame_rate: float | None = None) -> "TokenGrid":
        return cls.from_bytes(Path(path).read_bytes(), frame_rate=frame_rate)


def as_codes(x) -> np.ndarray:
    """Integer code array from a ``TokenGrid`` or array-like."""
    if isinstance(x, TokenGrid):
        return x.codes
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError(f"token codes must be integers, got {arr.dtype}")
    return arr
