"""One optimisation step of the denoiser on a batch of (clean, corrupted, condition) grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import d3pm
from ..schedule import NoiseSchedule
from . import checkpoint
from .losses import vlb_loss_tensor
from .model import ConMamba2Denoiser
from .optim import Adam


@dataclass(frozen=True)
class Batch:
    x0: np.ndarray    # (B, F, M) clean tokens
    y: np.ndarray     # (B, F, M) low-resolution condition tokens
    t: np.ndarray     # (B,)
    x_t: np.ndarray   # (B, F, M)


def make_batch(x0, y, s: NoiseSchedule, rng: np.random.Generator, t=None) -> Batch:
    """Draw timesteps uniformly in ``[1, T]`` (unless given) and corrupt ``x0``."""
    x0, y = np.asarray(x0), np.asarray(y)
    if t is None:
        t = rng.integers(1, s.T + 1, size=x0.shape[0])
    t = np.broadcast_to(np.asarray(t), (x0.shape[0],)).copy()
    x_t = d3pm.sample_forward(x0, t, s, rng)
    return Batch(x0, y, t, x_t)


def train_step(batch: Batch, model: ConMamba2Denoiser, opt: Adam, s: NoiseSchedule,
               aux_weight: float = 0.001) -> float:
    """Forward, backward and one Adam update; returns the per-token loss.

    A non-finite loss raises ``FloatingPointError`` before any parameter changes.
    """
    opt.zero_grad()
    logits = model.logits(batch.x_t, batch.t, batch.y)
    try:
        loss, parts = vlb_loss_tensor(batch.x0, batch.t, batch.x_t, logits, s, aux_weight, "mean")
    except FloatingPointError as e:
        raise FloatingPointError(f"{e}; timesteps {batch.t.tolist()}, step {opt.step_count}") from e
    loss.backward()
    for name, p in opt.params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in {name} at step {opt.step_count}")
    opt.step()
    return float(loss.data)


def state_tensors(model: ConMamba2Denoiser, opt: Adam | None = None) -> dict[str, np.ndarray]:
    out = {f"param.{k}": p.data for k, p in model.named_parameters().items()}
    if opt is not None:
        out.update({f"adam.m.{k}": v for k, v in opt.m.items()})
        out.update({f"adam.v.{k}": v for k, v in opt.v.items()})
    return out


def save_checkpoint(path, model: ConMamba2Denoiser, opt: Adam | None, extra: dict) -> None:
    config = {"model": model.metadata(), **extra}
    if opt is not None:
        config["adam"] = {"lr": opt.lr, "betas": list(opt.betas), "eps": opt.eps, "step": opt.step_count}
    checkpoint.save(path, config, state_tensors(model, opt))


def load_checkpoint(path) -> tuple[ConMamba2Denoiser, Adam | None, dict]:
    from .layers import ConMamba2Config

    config, tensors = checkpoint.load(path)
    meta = config["model"]
    model = ConMamba2Denoiser(ConMamba2Config(**meta["arch"]), meta["K"], meta["M"], meta["T"])
    named = model.named_parameters()
    for k, p in named.items():
        key = f"param.{k}"
        if key not in tensors:
            raise ValueError(f"checkpoint lacks parameter {k}")
        if tensors[key].shape != p.data.shape:
            raise ValueError(f"shape mismatch for {k}: {tensors[key].shape} vs {p.data.shape}")
        p.data = tensors[key].copy()
    opt = None
    if "adam" in config:
        a = config["adam"]
        opt = Adam(named, a["lr"], tuple(a["betas"]), a["eps"])
        opt.step_count = a["step"]
        for k in named:
            opt.m[k] = tensors[f"adam.m.{k}"].copy()
            opt.v[k] = tensors[f"adam.v.{k}"].copy()
    return model, opt, config
