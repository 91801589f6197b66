"""Invertible toy codec: MDCT analysis plus residual vector quantization."""
from .mdct import imdct, mdct, num_frames
from .rvq import (CodebookSet, decode, dequantize, encode, kmeans, nearest, quantize,
                  train_rvq)
from .wav import Waveform, read_wav, write_wav
