"""Discrete-diffusion bandwidth extension over vector-quantized audio tokens."""

__version__ = "0.1.0"
