"""Waveform container and 16-bit PCM mono WAV I/O (RIFF via the stdlib)."""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform has non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", x)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return self.samples.size


def to_pcm16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, w: Waveform) -> None:
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(w.sample_rate))
        f.writeframes(to_pcm16(w.samples).tobytes())


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM mono")
        rate = f.getframerate()
        data = f.readframes(f.getnframes())
    return Waveform(np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0, rate)


def quantize_pcm16(x: np.ndarray) -> np.ndarray:
    """Values exactly as they would read back from a 16-bit WAV."""
    return to_pcm16(x).astype(np.float64) / 32768.0
