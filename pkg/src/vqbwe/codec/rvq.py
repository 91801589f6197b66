"""Residual vector quantization of MDCT frames.

Each stage is a k-means codebook trained on the residual left by the stages
before it.  Nearest-neighbour search breaks ties toward the lowest index.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..tokens import TokenGrid, as_codes
from .mdct import imdct, mdct
from .wav import Waveform

MAGIC = b"VQCB"
VERSION = 1
# magic, version, M_cb, K, dim, window_len, sample_rate, config hash
_HEADER = struct.Struct("<4sHIIIII32s")


@dataclass(frozen=True)
class CodebookSet:
    """``codebooks[s, k]`` is entry ``k`` of stage ``s``; values are float32-representable."""

    codebooks: np.ndarray
    window_len: int
    sample_rate: int
    config_hash: bytes = field(default=bytes(32))

    def __post_init__(self):
        cb = np.asarray(self.codebooks, dtype=np.float32).astype(np.float64)
        if cb.ndim != 3:
            raise ValueError(f"codebooks must be (stages, K, dim), got {cb.shape}")
        if cb.shape[2] != self.window_len // 2:
            raise ValueError(f"codebook dim {cb.shape[2]} != window_len/2 = {self.window_len // 2}")
        if not np.all(np.isfinite(cb)):
            raise ValueError("codebooks contain non-finite entries")
        if len(self.config_hash) != 32:
            raise ValueError("config_hash must be 32 bytes")
        cb.setflags(write=False)
        object.__setattr__(self, "codebooks", cb)

    @property
    def num_stages(self) -> int:
        return self.codebooks.shape[0]

    @property
    def K(self) -> int:
        return self.codebooks.shape[1]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[2]

    @property
    def hop(self) -> int:
        return self.window_len // 2

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    def to_bytes(self) -> bytes:
        M, K, dim = self.codebooks.shape
        header = _HEADER.pack(MAGIC, VERSION, M, K, dim, self.window_len,
                              self.sample_rate, self.config_hash)
        return header + self.codebooks.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodebookSet":
        if len(data) < _HEADER.size:
            raise ValueError("truncated codebook header")
        magic, version, M, K, dim, window_len, rate, chash = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise ValueError(f"unsupported codebook version {version}")
        body = data[_HEADER.size:]
        if len(body) != 4 * M * K * dim:
            raise ValueError("codebook payload size does not match header")
        cb = np.frombuffer(body, dtype="<f4").reshape(M, K, dim)
        return cls(cb, window_len=window_len, sample_rate=rate, config_hash=chash)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CodebookSet":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def nearest(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the closest centroid per row (lowest index on ties)."""
    d = (np.sum(centroids ** 2, axis=1)[None, :] - 2.0 * x @ centroids.T)
    return np.argmin(d, axis=1)


def _kmeans_pp(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((K, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total > 0:
            i = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            i = min(i, n - 1)
        else:
            # fewer distinct points than centroids; duplicates are harmless
            i = int(rng.integers(n))
        centers[k] = x[i]
        d2 = np.minimum(d2, np.sum((x - centers[k]) ** 2, axis=1))
    return centers


def kmeans(x: np.ndarray, K: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd's algorithm from a k-means++ start; empty clusters keep their centroid."""
    centers = _kmeans_pp(x, K, rng)
    assign = None
    for _ in range(iters):
        new = nearest(x, centers)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=K)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, x)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
    return centers


def train_rvq(frames: np.ndarray, M_cb: int, K: int, iters: int = 25, seed=0,
              window_len: int | None = None, sample_rate: int = 8000,
              config_hash: bytes = bytes(32)) -> CodebookSet:
    """Fit ``M_cb`` residual k-means stages of ``K`` entries to ``frames`` ``(n, dim)``."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"frames must be (n, dim), got {x.shape}")
    if x.shape[0] < K:
        raise ValueError(f"need at least K={K} frames, got {x.shape[0]}")
    if window_len is None:
        window_len = 2 * x.shape[1]
    rng = np.random.default_rng(seed)
    residual = x.copy()
    stages = []
    for s in range(M_cb):
        if np.all(residual == residual[0]):
            raise ValueError(f"RVQ stage {s}: all {len(residual)} training vectors are identical")
        cb = kmeans(residual, K, iters, rng).astype(np.float32).astype(np.float64)
        residual -= cb[nearest(residual, cb)]
        stages.append(cb)
    return CodebookSet(np.stack(stages), window_len=window_len, sample_rate=sample_rate,
                       config_hash=config_hash)


def quantize(frames: np.ndarray, cb: CodebookSet) -> np.ndarray:
    """Greedy residual nearest-neighbour codes, shape ``(n, stages)``."""
    residual = np.array(frames, dtype=np.float64)
    codes = np.empty((residual.shape[0], cb.num_stages), dtype=np.int64)
    for s in range(cb.num_stages):
        idx = nearest(residual, cb.codebooks[s])
        codes[:, s] = idx
        residual -= cb.codebooks[s][idx]
    return codes


def dequantize(codes, cb: CodebookSet, stages: int | None = None) -> np.ndarray:
    """Sum of the selected codebook vectors per frame, optionally using only the first stages."""
    codes = as_codes(codes)
    if np.any(codes >= cb.K) or np.any(codes < 0):
        raise ValueError("token grid contains [MASK] or out-of-range codes; cannot decode")
    n_used = cb.num_stages if stages is None else stages
    out = np.zeros((codes.shape[0], cb.dim))
    for s in range(n_used):
        out += cb.codebooks[s][codes[:, s]]
    return out


def encode(w: Waveform, cb: CodebookSet) -> TokenGrid:
    if w.sample_rate != cb.sample_rate:
        raise ValueError(f"sample rate {w.sample_rate} does not match codec rate {cb.sample_rate}")
    codes = quantize(mdct(w.samples, cb.window_len), cb)
    return TokenGrid(codes, K=cb.K, frame_rate=cb.frame_rate)


def decode(tokens, cb: CodebookSet, length: int | None = None) -> Waveform:
    codes = as_codes(tokens)
    if isinstance(tokens, TokenGrid) and tokens.K != cb.K:
        raise ValueError(f"token grid K={tokens.K} does not match codebook K={cb.K}")
    if np.any(codes == cb.K):
        raise ValueError("cannot decode [MASK] tokens: the decoder has no mask embedding")
    frames = dequantize(codes, cb)
    return Waveform(imdct(frames, cb.window_len, length), cb.sample_rate)
