"""The conditional token denoiser: condition encoder, Mamba2-DPM stack and logit head."""
from __future__ import annotations

from dataclasses import asdict

import numpy as np

from . import autograd as ag
from . import layers as L
from .autograd import Tensor
from .layers import ConMamba2Config


def full_size_config() -> ConMamba2Config:
    """The full-size configuration (10 blocks of width 512)."""
    return ConMamba2Config(layers=10, feature_dim=512, state_dim=64, heads=8,
                           cond_dim=512, cond_heads=8)


def init_params(cfg: ConMamba2Config, K: int, M: int, seed=0, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    D, Dc = cfg.feature_dim, cfg.cond_dim

    def table(rows, dim):
        return L._param(rng.standard_normal((rows, dim)) / np.sqrt(M), dtype)

    return {
        "tok_embed": table(M * (K + 1), D),        # row K of each codebook block is [MASK]
        "cond_embed": table(M * K, Dc),
        "global": L.init_global_feature(rng, cfg, dtype),
        "time": L.init_time_mlp(rng, D, dtype),
        "blocks": [
            {"adaln": L.init_adaln(rng, D, D, dtype),
             "proj": L.init_linear(rng, D + Dc, D, dtype),
             "body": L.init_conmamba2_block(rng, cfg, dtype)}
            for _ in range(cfg.layers)
        ],
        "head": {"ln": L.init_layer_norm(D, dtype), "out": L.init_linear(rng, D, M * K, dtype)},
    }


def flatten(params, prefix: str = "") -> dict[str, Tensor]:
    """Dotted-name view of a nested parameter tree (insertion order)."""
    out: dict[str, Tensor] = {}
    items = params.items() if isinstance(params, dict) else enumerate(params)
    for k, v in items:
        name = f"{prefix}{k}"
        if isinstance(v, Tensor):
            out[name] = v
        elif v is not None:
            for kk, vv in flatten(v, name + ".").items():
                out.setdefault(kk, vv)
    return out


def _batched(tokens) -> tuple[np.ndarray, bool]:
    tokens = np.asarray(tokens)
    if not np.issubdtype(tokens.dtype, np.integer):
        raise TypeError("token grids must be integer arrays")
    if tokens.ndim == 2:
        return tokens[None], True
    if tokens.ndim != 3:
        raise ValueError(f"expected (F, M) or (B, F, M) tokens, got shape {tokens.shape}")
    return tokens, False


def condition_features(params, cfg: ConMamba2Config, y_tokens, K: int) -> Tensor:
    """Embed low-resolution tokens ``(B, F, M)`` and enrich them with the global feature."""
    y, _ = _batched(y_tokens)
    if np.any(y == K):
        raise ValueError("condition tokens must not contain [MASK]")
    if y.size and (y.min() < 0 or y.max() > K):
        raise ValueError(f"condition codes must lie in [0, {K})")
    M = y.shape[-1]
    emb = ag.embedding(params["cond_embed"], y + K * np.arange(M)).sum(axis=2)
    if cfg.positional:
        emb = emb + Tensor(L.positional_encoding(y.shape[1], cfg.cond_dim, emb.dtype))
    return L.global_feature(emb, params["global"], cfg.cond_heads)


def denoise_logits(params, cfg: ConMamba2Config, x_t, t, cond: Tensor, K: int) -> Tensor:
    """x0 logits ``(B, F, M, K)`` for batched ``x_t (B, F, M)`` and timesteps ``t`` (scalar or ``(B,)``)."""
    x, _ = _batched(x_t)
    Bt, F, M = x.shape
    if x.size and (x.min() < 0 or x.max() > K):
        raise ValueError(f"x_t codes must lie in [0, {K}]")
    if cond.shape[:2] != (Bt, F) and cond.shape[:2] != (1, F):
        raise ValueError(f"condition shape {cond.shape} does not match tokens {x.shape}")
    t = np.broadcast_to(np.asarray(t), (Bt,))
    h = ag.embedding(params["tok_embed"], x + (K + 1) * np.arange(M)).sum(axis=2)
    temb = L.time_mlp(t, params["time"], cfg.feature_dim)
    if cond.shape[0] != Bt:
        cond = ag.broadcast_to(cond, (Bt,) + cond.shape[1:])
    for blk in params["blocks"]:
        h = L.adaln(h, temb, blk["adaln"])
        h = L.apply_linear(ag.concat([h, cond], axis=-1), blk["proj"])
        h = L.conmamba2_block(h, blk["body"], cfg)
    out = L.apply_linear(L.apply_layer_norm(h, params["head"]["ln"]), params["head"]["out"])
    return out.reshape(Bt, F, M, K)


class ConMamba2Denoiser:
    """Parameters plus shape metadata; callable as a ``d3pm.sample`` denoiser."""

    def __init__(self, cfg: ConMamba2Config, K: int, M: int, T: int, seed=0,
                 dtype=np.float32, params=None):
        self.cfg, self.K, self.M, self.T = cfg, K, M, T
        self.params = params if params is not None else init_params(cfg, K, M, seed, dtype)

    def named_parameters(self) -> dict[str, Tensor]:
        return flatten(self.params)

    def metadata(self) -> dict:
        return {"arch": asdict(self.cfg), "K": self.K, "M": self.M, "T": self.T}

    def _check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [1, {self.T}]")

    def condition(self, y_tokens) -> Tensor:
        with ag.no_grad():
            return condition_features(self.params, self.cfg, y_tokens, self.K)

    def logits(self, x_t, t, y_tokens) -> Tensor:
        """Differentiable forward pass from raw condition tokens."""
        self._check_t(t)
        cond = condition_features(self.params, self.cfg, y_tokens, self.K)
        return denoise_logits(self.params, self.cfg, x_t, t, cond, self.K)

    def __call__(self, x_t, t, cond) -> np.ndarray:
        """Numpy logits with the same leading shape as ``x_t``.

        ``cond`` is either the output of :meth:`condition` or raw condition tokens.
        """
        self._check_t(t)
        _, single = _batched(x_t)
        with ag.no_grad():
            if not isinstance(cond, Tensor):
                cond = condition_features(self.params, self.cfg, cond, self.K)
            out = denoise_logits(self.params, self.cfg, x_t, t, cond, self.K).data
        out = out.astype(np.float64)
        return out[0] if single else out


def denoise(x_t, t, cond, model: ConMamba2Denoiser) -> np.ndarray:
    return model(x_t, t, cond)
