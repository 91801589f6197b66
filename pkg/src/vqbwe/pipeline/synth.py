"""Synthetic harmonic corpus whose high band is a fixed function of its low band.

Every utterance is a sequence of segments, each holding one of a few harmonic
templates.  The fundamental period equals the codec hop, so the MDCT frames of
a steady segment repeat exactly and the low-to-high mapping is learnable at
desk scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CorpusSpec

# stream tags for SeedSequence so templates and utterances draw independently
TEMPLATE_STREAM = 1
UTTERANCE_STREAM = 2
CUTOFF_STREAM = 3


def stream(seed: int, *ids: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *ids]))


def high_band_envelope(low: np.ndarray, harmonics: int) -> np.ndarray:
    """Amplitudes of harmonics ``3..harmonics`` from the first two."""
    a1, a2 = low
    k = np.arange(3, harmonics + 1)
    decay = 0.08 + 0.25 * a2
    return a1 * np.exp(-(k - 1) * decay) * (1.0 + 0.6 * np.cos(np.pi * k * a2))


@dataclass(frozen=True)
class Templates:
    amplitudes: np.ndarray   # (templates, harmonics), before the global gain
    phases: np.ndarray       # (harmonics,)
    gain: float

    def frequencies(self, f0: float) -> np.ndarray:
        return f0 * np.arange(1, self.amplitudes.shape[1] + 1)


def make_templates(spec: CorpusSpec, seed: int) -> Templates:
    rng = stream(seed, TEMPLATE_STREAM)
    low = rng.uniform(0.3, 1.0, (spec.templates, 2))
    amps = np.stack([np.concatenate([l, high_band_envelope(l, spec.harmonics)]) for l in low])
    phases = rng.uniform(0, 2 * np.pi, spec.harmonics)
    gain = spec.peak / amps.sum(axis=1).max()
    return Templates(amps, phases, gain)


def hop_for(spec: CorpusSpec) -> int:
    period = spec.sample_rate / spec.f0
    if not float(period).is_integer():
        raise ValueError("f0 must divide the sample rate")
    return int(period)


def template_sequence(spec: CorpusSpec, n_hops: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """``[(template, length_in_hops), ...]`` covering ``n_hops``; neighbours differ."""
    seq: list[tuple[int, int]] = []
    used = 0
    prev = -1
    while used < n_hops:
        choices = [k for k in range(spec.templates) if k != prev] or [0]
        tpl = int(choices[rng.integers(len(choices))])
        length = int(min(rng.integers(spec.segment_min, spec.segment_max + 1), n_hops - used))
        seq.append((tpl, length))
        used += length
        prev = tpl
    return seq


def render(spec: CorpusSpec, tpl: Templates, seq, rng: np.random.Generator | None = None) -> np.ndarray:
    hop = hop_for(spec)
    n = int(round(spec.duration * spec.sample_rate))
    # per-sample amplitude track with one-hop linear crossfades at boundaries
    per_hop = np.concatenate([np.repeat(tpl.amplitudes[[k]], length, axis=0) for k, length in seq])
    track = np.repeat(per_hop, hop, axis=0)[:n]
    ramp = (np.arange(hop) + 0.5) / hop
    start = 0
    for (k_prev, length), (k_next, _) in zip(seq, seq[1:]):
        start += length * hop
        lo = start - hop // 2
        idx = np.arange(lo, min(lo + hop, n))
        if idx.size and idx[0] >= 0:
            w = ramp[: idx.size, None]
            track[idx] = (1 - w) * tpl.amplitudes[k_prev] + w * tpl.amplitudes[k_next]
    t = np.arange(n) / spec.sample_rate
    freqs = tpl.frequencies(spec.f0)
    carriers = np.cos(2 * np.pi * freqs[None, :] * t[:, None] + tpl.phases[None, :])
    x = tpl.gain * np.sum(track * carriers, axis=1)
    if spec.noise_level > 0:
        if rng is None:
            raise ValueError("noise needs an rng")
        x = x + spec.noise_level * rng.standard_normal(n)
    return np.clip(x, -1.0, 1.0)


def utterance(spec: CorpusSpec, tpl: Templates, seed: int, utt: int) -> tuple[np.ndarray, list]:
    rng = stream(seed, UTTERANCE_STREAM, utt)
    n_hops = -(-int(round(spec.duration * spec.sample_rate)) // hop_for(spec))
    seq = template_sequence(spec, n_hops, rng)
    return render(spec, tpl, seq, rng), seq


def analytic_centroid(spec: CorpusSpec, tpl: Templates, seq) -> float:
    """Power-weighted mean frequency implied by the segment durations."""
    freqs = tpl.frequencies(spec.f0)
    power = np.zeros_like(freqs)
    for k, length in seq:
        power += length * tpl.amplitudes[k] ** 2
    return float(np.sum(freqs * power) / np.sum(power))


def spectral_centroid(x: np.ndarray, sample_rate: int) -> float:
    spec = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(len(x), 1.0 / sample_rate)
    return float(np.sum(f * spec) / np.sum(spec))
