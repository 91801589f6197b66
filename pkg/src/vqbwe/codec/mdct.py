"""Sine-window MDCT with 50% overlap and its overlap-add inverse.

Both directions use the orthonormal scaling ``sqrt(2 / hop)`` so that the
transform pair is a tight frame: ``imdct(mdct(x)) == x`` on every sample of
the original signal, and coefficient energy matches signal energy.

The signal is padded with one hop of zeros in front and zero-padded at the end
to a whole number of hops plus one more hop, so every original sample is
covered by two frames.  A signal of ``n`` samples yields
``ceil(n / hop) + 1`` frames.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=16)
def _basis(window_len: int) -> tuple[np.ndarray, np.ndarray]:
    if window_len < 2 or window_len % 2:
        raise ValueError(f"window_len must be a positive even integer, got {window_len}")
    hop = window_len // 2
    n = np.arange(window_len)
    k = np.arange(hop)
    window = np.sin(np.pi * (n + 0.5) / window_len)
    basis = np.sqrt(2.0 / hop) * np.cos(np.pi / hop * (n[:, None] + 0.5 + hop / 2) * (k[None, :] + 0.5))
    window.setflags(write=False)
    basis.setflags(write=False)
    return window, basis


def num_frames(n_samples: int, window_len: int) -> int:
    hop = window_len // 2
    return -(-n_samples // hop) + 1


def mdct(x, window_len: int) -> np.ndarray:
    """MDCT frames of a 1-D signal, shape ``(frames, window_len // 2)``."""
    samples = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {samples.shape}")
    if samples.size == 0:
        raise ValueError("cannot transform an empty signal")
    window, basis = _basis(window_len)
    hop = window_len // 2
    F = num_frames(samples.size, window_len)
    padded = np.zeros((F + 1) * hop)
    padded[hop: hop + samples.size] = samples
    frames = np.lib.stride_tricks.sliding_window_view(padded, window_len)[::hop]
    assert frames.shape[0] == F
    return (frames * window) @ basis


def imdct(coefs: np.ndarray, window_len: int, length: int | None = None) -> np.ndarray:
    """Overlap-add inverse of :func:`mdct`; returns ``length`` samples
    (default ``(frames - 1) * hop``)."""
    coefs = np.asarray(coefs, dtype=np.float64)
    window, basis = _basis(window_len)
    hop = window_len // 2
    if coefs.ndim != 2 or coefs.shape[1] != hop:
        raise ValueError(f"expected coefficients of shape (frames, {hop}), got {coefs.shape}")
    F = coefs.shape[0]
    if F < 2:
        raise ValueError("need at least two frames to reconstruct a signal")
    full = (F - 1) * hop
    if length is None:
        length = full
    if length > full:
        raise ValueError(f"{F} frames cover at most {full} samples, asked for {length}")
    blocks = (coefs @ basis.T) * window           # (F, window_len)
    out = np.zeros((F + 1) * hop)
    # first halves land on hops 0..F-1, second halves on hops 1..F
    out[: F * hop] += blocks[:, :hop].reshape(-1)
    out[hop:] += blocks[:, hop:].reshape(-1)
    return out[hop: hop + length]
