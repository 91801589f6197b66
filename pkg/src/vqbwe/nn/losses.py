"""Differentiable variational-bound loss over denoiser logits."""
from __future__ import annotations

import numpy as np

from .. import d3pm
from ..schedule import NoiseSchedule
from . import autograd as ag
from .autograd import Tensor

LOG_FLOOR = 1e-30


def vlb_loss_tensor(x0, t, x_t, logits: Tensor, s: NoiseSchedule, aux_weight: float = 0.001,
                    reduction: str = "sum") -> tuple[Tensor, dict]:
    """Tensor counterpart of :func:`vqbwe.d3pm.vlb_loss`.

    ``reduction="mean"`` divides by the number of token positions.  Returns the
    loss and a dict of float diagnostics (``kl``, ``ce`` on the same scale).
    """
    x0, x_t = np.asarray(x0), np.asarray(x_t)
    if logits.shape != x0.shape + (s.K,):
        raise ValueError(f"logits shape {logits.shape} != {x0.shape + (s.K,)}")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    q = d3pm.posterior(x_t, x0, t, s)
    c = d3pm.reverse_coefficients(x_t, t, s)
    lg = logits.astype(np.float64)
    w = ag.softmax(lg, axis=-1) * c.inv_evidence
    total = w.sum(axis=-1, keepdims=True)
    real = (w * c.prev_stay + total * c.prev_unif) * c.row_real
    mask = total * (c.row_mask * c.prev_mask)
    p = ag.concat([real, mask], axis=-1)
    logp = ag.log(p, LOG_FLOOR) - ag.log(p.sum(axis=-1, keepdims=True), LOG_FLOOR)
    logq = np.log(np.where(q > 0, q, 1.0))
    kl = (q * logq).sum() - (logp * q).sum()
    onehot = np.eye(s.K)[x0]
    ce = -(ag.log_softmax(lg, axis=-1) * onehot).sum()
    loss = kl + ce * aux_weight
    if reduction == "mean":
        scale = 1.0 / max(x0.size, 1)
        loss, kl, ce = loss * scale, kl * scale, ce * scale
    if not np.isfinite(loss.data):
        raise FloatingPointError(f"non-finite loss (kl={kl.data}, ce={ce.data})")
    return loss, {"kl": float(kl.data), "ce": float(ce.data)}
