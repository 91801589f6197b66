"""Low-pass corruption, magnitude spectrograms and the log-spectral distance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec.wav import Waveform

DEFAULT_FFT_SIZE = 2048
DEFAULT_HOP = 512
MAG_FLOOR = 1e-8


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # (frames, fft_size // 2 + 1)
    fft_size: int
    hop: int
    sample_rate: int | None = None

    @property
    def num_bins(self) -> int:
        return self.magnitudes.shape[1]

    def frequencies(self) -> np.ndarray:
        if self.sample_rate is None:
            raise ValueError("sample rate unknown")
        return np.fft.rfftfreq(self.fft_size, d=1.0 / self.sample_rate)


def _samples_and_rate(w):
    if isinstance(w, Waveform):
        return w.samples, w.sample_rate
    return np.asarray(w, dtype=np.float64), None


def lowpass(w: Waveform, cutoff: float) -> Waveform:
    """Brickwall low-pass: zero every DFT bin strictly above ``cutoff`` Hz."""
    nyquist = w.sample_rate / 2
    if not 0 < cutoff < nyquist:
        raise ValueError(f"cutoff must lie in (0, {nyquist}), got {cutoff}")
    spec = np.fft.rfft(w.samples)
    freqs = np.fft.rfftfreq(w.samples.size, d=1.0 / w.sample_rate)
    spec[freqs > cutoff] = 0.0
    return Waveform(np.fft.irfft(spec, n=w.samples.size), w.sample_rate)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft_magnitude(w, fft_size: int = DEFAULT_FFT_SIZE, hop: int = DEFAULT_HOP) -> Spectrogram:
    """Hann-windowed magnitude STFT.

    Frames start at multiples of ``hop``; the tail is zero-padded so every
    sample lands in at least one frame (one frame minimum).
    """
    x, rate = _samples_and_rate(w)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("cannot analyse an empty signal")
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if hop < 1:
        raise ValueError("hop must be positive")
    n_frames = 1 + -(-max(x.size - fft_size, 0) // hop)
    padded = np.zeros((n_frames - 1) * hop + fft_size)
    padded[: x.size] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, fft_size)[::hop]
    mags = np.abs(np.fft.rfft(frames * hann(fft_size), axis=1))
    return Spectrogram(mags, fft_size, hop, rate)


def lsd(reference, estimate, fft_size: int = DEFAULT_FFT_SIZE, hop: int = DEFAULT_HOP,
        floor: float = MAG_FLOOR) -> float:
    """Log-spectral distance in log10 units, averaged over STFT frames.

    Per frame: root-mean-square over frequency bins of
    ``log10 |S| - log10 |S_hat|``, with magnitudes floored at ``floor``.
    """
    ref, r_rate = _samples_and_rate(reference)
    est, e_rate = _samples_and_rate(estimate)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    if r_rate is not None and e_rate is not None and r_rate != e_rate:
        raise ValueError(f"sample rate mismatch: {r_rate} vs {e_rate}")
    S = stft_magnitude(ref, fft_size, hop).magnitudes
    S_hat = stft_magnitude(est, fft_size, hop).magnitudes
    diff = np.log10(np.maximum(S, floor)) - np.log10(np.maximum(S_hat, floor))
    return float(np.mean(np.sqrt(np.mean(diff ** 2, axis=1))))
