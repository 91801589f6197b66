"""Tokenise a synthetic utterance with the MDCT + residual VQ codec, then decode it.

Run:  python3 demos/02_codec_roundtrip.py
"""
import numpy as np

from vqbwe.codec import Waveform, decode, dequantize, encode, mdct, quantize, train_rvq
from vqbwe.dsp import lowpass, lsd
from vqbwe.pipeline.config import RunConfig
from vqbwe.pipeline.synth import make_templates, utterance

spec = RunConfig().corpus
tpl = make_templates(spec, seed=0)
print("template amplitudes (harmonic 1..15):\n", (tpl.amplitudes * tpl.gain).round(3))

waves = [Waveform(utterance(spec, tpl, 0, u)[0], spec.sample_rate) for u in range(12)]
frames = np.concatenate([mdct(w.samples, 64) for w in waves])
print("MDCT frames:", frames.shape)           # (utterances * 251, 32)

cb = train_rvq(frames, M_cb=4, K=64, iters=20, seed=0, window_len=64)
codes = quantize(frames, cb)
for stages in range(5):
    rec = dequantize(codes, cb, stages=stages)
    print(f"stages={stages}  residual MSE={np.mean((frames - rec) ** 2):.3e}")

w = waves[0]
tokens = encode(w, cb)
print("token grid:", tokens.shape, "first frames:\n", tokens.codes[:4])
back = decode(tokens, cb, length=len(w))
low = lowpass(w, 1000.0)
print(f"LSD(decoded, clean)    = {lsd(w, back):.3f}")
print(f"LSD(low-passed, clean) = {lsd(w, low):.3f}")
