"""Denoiser networks, differentiation and training utilities."""
from .layers import ConMamba2Config
from .model import ConMamba2Denoiser, denoise, full_size_config
from .tabular import TabularDenoiser, tabular_denoiser

__all__ = ["ConMamba2Config", "ConMamba2Denoiser", "denoise", "full_size_config",
           "TabularDenoiser", "tabular_denoiser"]
