"""Denoiser building blocks as pure functions over nested parameter dicts.

Every ``init_*`` returns a dict of :class:`Tensor` leaves; the matching forward
function takes ``(x, params, ...)``.  Sequence tensors are laid out
``(batch, length, channels)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

LN_EPS = 1e-5


@dataclass(frozen=True)
class ConMamba2Config:
    layers: int = 2
    feature_dim: int = 32
    state_dim: int = 16
    conv_width: int = 4          # causal conv inside each Mamba-2 mixer
    heads: int = 2
    expand: int = 2
    ff_mult: int = 4
    conv_kernel: int = 5         # depthwise conv sub-layer of the block
    ffn_half_step: bool = True
    chunk: int = 16
    cond_dim: int = 32
    cond_layers: int = 2
    cond_heads: int = 2
    positional: bool = True

    def __post_init__(self):
        for name in ("layers", "feature_dim", "state_dim", "conv_width", "heads", "expand",
                     "ff_mult", "conv_kernel", "chunk", "cond_dim", "cond_layers", "cond_heads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.feature_dim % self.heads:
            raise ValueError("feature_dim must be divisible by heads")
        if self.cond_dim % self.cond_heads:
            raise ValueError("cond_dim must be divisible by cond_heads")

    @property
    def inner_dim(self) -> int:
        return self.expand * self.feature_dim

    @property
    def head_dim(self) -> int:
        return self.inner_dim // self.heads


def _param(arr, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def init_linear(rng, fan_in, fan_out, dtype, bias=True, scale=1.0):
    p = {"w": _param(rng.standard_normal((fan_in, fan_out)) * scale / math.sqrt(fan_in), dtype)}
    if bias:
        p["b"] = _param(np.zeros(fan_out), dtype)
    return p


def init_layer_norm(dim, dtype):
    return {"w": _param(np.ones(dim), dtype), "b": _param(np.zeros(dim), dtype)}


def apply_linear(x, p):
    return ag.linear(x, p["w"], p.get("b"))


def apply_layer_norm(x, p):
    return ag.layer_norm(x, p["w"], p["b"], LN_EPS)


# -- timestep embedding and AdaLN ------------------------------------------------

def sinusoidal_embedding(t, dim: int, dtype=np.float64) -> np.ndarray:
    """``(len(t), dim)`` sin/cos features of integer timesteps."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb.astype(dtype)


def init_time_mlp(rng, dim, dtype):
    return {"l1": init_linear(rng, dim, dim, dtype), "l2": init_linear(rng, dim, dim, dtype)}


def time_mlp(t, p, dim) -> Tensor:
    dtype = p["l1"]["w"].dtype
    h = Tensor(sinusoidal_embedding(t, dim, dtype))
    return apply_linear(ag.silu(apply_linear(h, p["l1"])), p["l2"])


def init_adaln(rng, emb_dim, dim, dtype):
    p = init_linear(rng, emb_dim, 2 * dim, dtype, scale=0.1)
    bias = np.zeros(2 * dim)
    bias[:dim] = 1.0
    p["b"] = _param(bias, dtype)
    return p


def adaln(x: Tensor, t_embed: Tensor, p) -> Tensor:
    """``a * LayerNorm(x) + b`` with ``(a, b)`` a linear projection of the timestep embedding.

    ``x`` is ``(batch, length, dim)`` and ``t_embed`` ``(batch, emb_dim)``.
    """
    dim = x.shape[-1]
    ab = apply_linear(t_embed, p)
    if ab.shape[-1] != 2 * dim:
        raise ValueError(f"AdaLN projection gives {ab.shape[-1]} values, need {2 * dim}")
    a = ab[:, None, :dim]
    b = ab[:, None, dim:]
    return a * ag.layer_norm(x, eps=LN_EPS) + b


# -- Mamba-2 mixer ----------------------------------------------------------------

def init_mamba2(rng, cfg: ConMamba2Config, dtype):
    D, Din, N, H = cfg.feature_dim, cfg.inner_dim, cfg.state_dim, cfg.heads
    conv_ch = Din + 2 * N
    dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), H))
    return {
        "in_proj": init_linear(rng, D, 2 * Din + 2 * N + H, dtype, bias=False),
        "conv_w": _param(rng.standard_normal((conv_ch, cfg.conv_width)) / math.sqrt(cfg.conv_width), dtype),
        "conv_b": _param(np.zeros(conv_ch), dtype),
        "dt_bias": _param(dt + np.log(-np.expm1(-dt)), dtype),   # inverse softplus
        "A_log": _param(np.log(rng.uniform(1, 16, H)), dtype),
        "D": _param(np.ones(H), dtype),
        "out_proj": init_linear(rng, Din, D, dtype, bias=False),
    }


def mamba2_mixer(u: Tensor, p, cfg: ConMamba2Config) -> Tensor:
    """Selective SSM mixer: gated, causal-conv-preprocessed SSD scan."""
    Bt, L, _ = u.shape
    Din, N, H, P = cfg.inner_dim, cfg.state_dim, cfg.heads, cfg.head_dim
    zxbcdt = apply_linear(u, p["in_proj"])
    z = zxbcdt[..., :Din]
    xbc = zxbcdt[..., Din:2 * Din + 2 * N]
    dt = zxbcdt[..., 2 * Din + 2 * N:]
    xbc = ag.silu(ag.conv1d_depthwise(xbc, p["conv_w"], p["conv_b"], "causal"))
    x = xbc[..., :Din].reshape(Bt, L, H, P)
    Bm = xbc[..., Din:Din + N].reshape(Bt, L, 1, N)
    Cm = xbc[..., Din + N:].reshape(Bt, L, 1, N)
    dt = ag.softplus(dt + p["dt_bias"])                       # (Bt, L, H)
    decay = ag.exp(dt * -ag.exp(p["A_log"]))
    y = ag.ssd_scan(x * dt.reshape(Bt, L, H, 1), decay, Bm, Cm, cfg.chunk)
    y = y + x * p["D"].reshape(H, 1)
    y = y.reshape(Bt, L, Din) * ag.silu(z)
    return apply_linear(y, p["out_proj"])


def init_bi_mamba2(rng, cfg, dtype, tied: bool = False):
    fwd = init_mamba2(rng, cfg, dtype)
    return {"fwd": fwd, "bwd": fwd if tied else init_mamba2(rng, cfg, dtype)}


def bi_mamba2(x: Tensor, cfg: ConMamba2Config, p) -> Tensor:
    """Forward scan plus a scan over the time-reversed sequence, summed.

    ``p["bwd"] = None`` gives the unidirectional layer.
    """
    out = mamba2_mixer(x, p["fwd"], cfg)
    if p.get("bwd") is not None:
        out = out + ag.flip(mamba2_mixer(ag.flip(x, 1), p["bwd"], cfg), 1)
    return out


# -- ConMamba2 block ----------------------------------------------------------------

def init_conmamba2_block(rng, cfg: ConMamba2Config, dtype):
    D = cfg.feature_dim
    return {
        "ffn": {"ln": init_layer_norm(D, dtype),
                "l1": init_linear(rng, D, cfg.ff_mult * D, dtype),
                "l2": init_linear(rng, cfg.ff_mult * D, D, dtype, scale=0.5)},
        "mamba": {"ln": init_layer_norm(D, dtype), **init_bi_mamba2(rng, cfg, dtype)},
        "conv": {"ln": init_layer_norm(D, dtype),
                 "pw1": init_linear(rng, D, 2 * D, dtype),
                 "dw_w": _param(rng.standard_normal((D, cfg.conv_kernel)) / math.sqrt(cfg.conv_kernel), dtype),
                 "dw_b": _param(np.zeros(D), dtype),
                 "pw2": init_linear(rng, D, D, dtype, scale=0.5)},
        "ln": init_layer_norm(D, dtype),
    }


def feed_forward(x, p):
    h = apply_layer_norm(x, p["ln"])
    return apply_linear(ag.silu(apply_linear(h, p["l1"])), p["l2"])


def conv_module(x, p, cfg: ConMamba2Config):
    D = x.shape[-1]
    h = apply_linear(apply_layer_norm(x, p["ln"]), p["pw1"])
    h = h[..., :D] * ag.sigmoid(h[..., D:])                 # GLU
    h = ag.silu(ag.conv1d_depthwise(h, p["dw_w"], p["dw_b"], "same"))
    return apply_linear(h, p["pw2"])


def conmamba2_block(x: Tensor, p, cfg: ConMamba2Config) -> Tensor:
    """FeedForward -> Bi-Mamba-2 -> Conv -> LayerNorm, each around a residual."""
    scale = 0.5 if cfg.ffn_half_step else 1.0
    x = x + feed_forward(x, p["ffn"]) * scale
    x = x + bi_mamba2(apply_layer_norm(x, p["mamba"]["ln"]), cfg, p["mamba"])
    x = x + conv_module(x, p["conv"], cfg)
    return x + apply_layer_norm(x, p["ln"])


# -- transformer encoder with a CLS token --------------------------------------------

def init_attention(rng, dim, dtype):
    return {name: init_linear(rng, dim, dim, dtype) for name in ("q", "k", "v", "o")}


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """Row-softmax of ``q k^T / sqrt(d)`` over the last two axes."""
    d = q.shape[-1]
    return ag.softmax((q @ k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / math.sqrt(d)), axis=-1)


def multi_head_attention(x: Tensor, p, heads: int) -> Tensor:
    Bt, L, D = x.shape
    dh = D // heads

    def split(t):
        return t.reshape(Bt, L, heads, dh).transpose(0, 2, 1, 3)

    q, k, v = (split(apply_linear(x, p[n])) for n in ("q", "k", "v"))
    out = attention_weights(q, k) @ v                     # (Bt, heads, L, dh)
    return apply_linear(out.transpose(0, 2, 1, 3).reshape(Bt, L, D), p["o"])


def init_encoder_layer(rng, dim, dtype, ff_mult=4):
    return {"ln1": init_layer_norm(dim, dtype), "attn": init_attention(rng, dim, dtype),
            "ln2": init_layer_norm(dim, dtype),
            "ff1": init_linear(rng, dim, ff_mult * dim, dtype),
            "ff2": init_linear(rng, ff_mult * dim, dim, dtype)}


def encoder_layer(x, p, heads):
    x = x + multi_head_attention(apply_layer_norm(x, p["ln1"]), p["attn"], heads)
    h = ag.silu(apply_linear(apply_layer_norm(x, p["ln2"]), p["ff1"]))
    return x + apply_linear(h, p["ff2"])


def init_global_feature(rng, cfg: ConMamba2Config, dtype):
    return {"cls": _param(rng.standard_normal((1, 1, cfg.cond_dim)) * 0.5, dtype),
            "layers": [init_encoder_layer(rng, cfg.cond_dim, dtype) for _ in range(cfg.cond_layers)],
            "ln": init_layer_norm(cfg.cond_dim, dtype)}


def global_feature(tokens: Tensor, p, heads: int) -> Tensor:
    """Prepend a learned CLS vector, encode, and add the CLS output to every token."""
    Bt, L, D = tokens.shape
    if L == 0:
        raise ValueError("global feature of an empty sequence")
    cls = ag.broadcast_to(p["cls"], (Bt, 1, D))
    h = ag.concat([cls, tokens], axis=1)
    for layer in p["layers"]:
        h = encoder_layer(h, layer, heads)
    h = apply_layer_norm(h, p["ln"])
    return tokens + h[:, :1, :]


def positional_encoding(length: int, dim: int, dtype) -> np.ndarray:
    return sinusoidal_embedding(np.arange(length), dim, dtype)
