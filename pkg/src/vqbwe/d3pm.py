"""Forward corruption, posteriors, reverse kernels and sampling over token grids.

Token arrays have arbitrary leading shape (typically ``(F, M_cb)`` or
``(B, F, M_cb)``); probability fields append a trailing axis of size ``K+1``
whose last entry is ``[MASK]``.  Timesteps are either a scalar or an array
matching the leading batch axes, e.g. shape ``(B,)``.

The denoiser is x0-parameterised: it returns logits over the ``K`` real codes,
and the reverse kernel is the analytic posterior averaged over that
prediction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .schedule import NoiseSchedule
from .tokens import as_codes

__all__ = [
    "forward_marginal",
    "sample_forward",
    "posterior",
    "reverse_coefficients",
    "reverse_probs",
    "reverse_step",
    "sample",
    "terminal_distribution",
    "draw_categorical",
    "vlb_loss",
    "VLBTerms",
    "softmax",
]

Denoiser = Callable[[np.ndarray, np.ndarray, object], np.ndarray]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _expand(values, ndim: int) -> np.ndarray:
    """Right-pad a per-batch coefficient so it broadcasts against ``ndim`` axes."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim > ndim:
        raise ValueError(f"timestep array has {v.ndim} dims but tokens have {ndim}")
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def _check_clean(x0: np.ndarray, K: int) -> None:
    if np.any(x0 == K):
        raise ValueError("clean tokens x0 must not contain [MASK]")
    if x0.size and (x0.min() < 0 or x0.max() > K):
        raise ValueError(f"codes must lie in [0, {K}]")


def _check_tokens(x: np.ndarray, K: int) -> None:
    if x.size and (x.min() < 0 or x.max() > K):
        raise ValueError(f"codes must lie in [0, {K}]")


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def draw_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per position from ``probs[..., n]`` by inverse-CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1] + (1,)) * cdf[..., -1:]
    idx = np.sum(cdf <= u, axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1).astype(np.int64)


def _one_hot(x: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(x.shape + (n,))
    np.put_along_axis(out, x[..., None], 1.0, axis=-1)
    return out


def forward_marginal(x0, t, s: NoiseSchedule) -> np.ndarray:
    """``q(x_t | x_0)`` for every position; shape ``x0.shape + (K+1,)``."""
    x0 = as_codes(x0)
    _check_clean(x0, s.K)
    stay, unif, mask = (_expand(c, x0.ndim)[..., None] for c in s.cumulative_coefficients(t))
    K = s.K
    probs = np.empty(x0.shape + (K + 1,))
    probs[..., :K] = unif
    probs[..., K:] = mask
    probs[..., :K] += stay * _one_hot(x0, K)
    return probs


def sample_forward(x0, t, s: NoiseSchedule, seed=None) -> np.ndarray:
    """Draw ``x_t ~ q(x_t | x_0)`` independently per position."""
    x0 = as_codes(x0)
    _check_clean(x0, s.K)
    rng = _rng(seed)
    stay, unif, mask = (np.broadcast_to(_expand(c, x0.ndim), x0.shape)
                        for c in s.cumulative_coefficients(t))
    u = rng.random(x0.shape)
    resample = rng.integers(0, s.K, size=x0.shape)
    out = np.where(u < stay, x0, resample)
    out = np.where(u >= stay + s.K * unif, s.K, out)
    return out.astype(np.int64)


def _step_row(x_t: np.ndarray, t, s: NoiseSchedule):
    """Row ``Q_t[x_t, j]`` split into real-code columns ``(..., K)`` and the mask column ``(..., 1)``."""
    K = s.K
    alpha, beta, gamma = (_expand(c, x_t.ndim)[..., None] for c in s.step_coefficients(t))
    is_mask = (x_t == K)[..., None]
    real = np.where(is_mask, gamma, beta + alpha * _one_hot(np.where(x_t == K, 0, x_t), K))
    mask = np.where(is_mask, 1.0, 0.0)
    return real, mask


def posterior(x_t, x0, t, s: NoiseSchedule) -> np.ndarray:
    """``q(x_{t-1} | x_t, x_0)``, normalised per position; shape ``(..., K+1)``.

    At ``t = 1`` this is the one-hot of ``x_0``.  Raises ``ValueError`` if some
    ``(x_t, x_0)`` pair has zero probability under the schedule.
    """
    x_t, x0 = as_codes(x_t), as_codes(x0)
    if x_t.shape != x0.shape:
        raise ValueError(f"shape mismatch: x_t {x_t.shape} vs x0 {x0.shape}")
    _check_clean(x0, s.K)
    _check_tokens(x_t, s.K)
    s.check_t(t)
    K = s.K
    t_arr = np.asarray(t)
    if np.all(t_arr == 1):
        return _one_hot(x0, K + 1)
    row_real, row_mask = _step_row(x_t, t, s)
    stay, unif, mask = (_expand(c, x0.ndim)[..., None]
                        for c in s.cumulative_coefficients(t_arr - 1))
    col_real = unif + stay * _one_hot(x0, K)
    unnorm = np.concatenate([row_real * col_real, row_mask * mask], axis=-1)
    z = unnorm.sum(axis=-1, keepdims=True)
    if np.any(z <= 0):
        bad = tuple(int(i) for i in np.argwhere(z[..., 0] <= 0)[0])
        raise ValueError(f"impossible (x_t, x_0) pair under the schedule at position {bad}")
    return unnorm / z


@dataclass(frozen=True)
class ReverseCoefficients:
    """Position-wise constants of the reverse kernel at one timestep.

    ``p(x_{t-1}=j | x_t)`` for real ``j`` is
    ``row_real[j] * (prev_stay * w[j] + prev_unif * sum(w))`` and for ``[MASK]``
    ``row_mask * prev_mask * sum(w)``, with ``w = p(x0) * inv_evidence``.
    """

    row_real: np.ndarray      # (..., K)
    row_mask: np.ndarray      # (..., 1)
    inv_evidence: np.ndarray  # (..., K), up to a per-position scale; 0 where q(x_t | x0) = 0
    prev_stay: np.ndarray     # broadcastable (..., 1)
    prev_unif: np.ndarray
    prev_mask: np.ndarray


def reverse_coefficients(x_t, t, s: NoiseSchedule) -> ReverseCoefficients:
    x_t = as_codes(x_t)
    _check_tokens(x_t, s.K)
    s.check_t(t)
    K = s.K
    t_arr = np.asarray(t)
    row_real, row_mask = _step_row(x_t, t, s)
    stay, unif, mask = (_expand(c, x_t.ndim)[..., None] for c in s.cumulative_coefficients(t_arr))
    is_mask = (x_t == K)[..., None]
    onehot = _one_hot(np.where(x_t == K, 0, x_t), K)
    evidence = np.where(is_mask, np.broadcast_to(mask, onehot.shape), unif + stay * onehot)
    with np.errstate(divide="ignore"):
        inv = np.where(evidence > 0, 1.0 / np.where(evidence > 0, evidence, 1.0), 0.0)
    # only ratios matter; rescaling keeps late-timestep values in range
    top = inv.max(axis=-1, keepdims=True)
    inv = inv / np.where(top > 0, top, 1.0)
    pstay, punif, pmask = (_expand(c, x_t.ndim)[..., None]
                           for c in s.cumulative_coefficients(t_arr - 1))
    return ReverseCoefficients(row_real, row_mask, inv, pstay, punif, pmask)


def reverse_probs(x0_probs: np.ndarray, x_t, t, s: NoiseSchedule) -> np.ndarray:
    """Reverse kernel from a distribution over clean codes ``(..., K)``."""
    c = reverse_coefficients(x_t, t, s)
    x0_probs = np.asarray(x0_probs, dtype=np.float64)
    if x0_probs.shape != c.row_real.shape:
        raise ValueError(f"x0 distribution shape {x0_probs.shape} != {c.row_real.shape}")
    w = x0_probs * c.inv_evidence
    total = w.sum(axis=-1, keepdims=True)
    real = c.row_real * (c.prev_stay * w + c.prev_unif * total)
    mask = c.row_mask * c.prev_mask * total
    out = np.concatenate([real, mask], axis=-1)
    z = out.sum(axis=-1, keepdims=True)
    if np.any(z <= 0):
        bad = tuple(int(i) for i in np.argwhere(z[..., 0] <= 0)[0])
        raise ValueError(f"x0 prediction has no mass on codes consistent with x_t at {bad}")
    return out / z


def reverse_step(x0_logits: np.ndarray, x_t, t, s: NoiseSchedule) -> np.ndarray:
    """``p(x_{t-1} | x_t) = sum_x0 q(x_{t-1} | x_t, x0) softmax(logits)[x0]``."""
    x0_logits = np.asarray(x0_logits, dtype=np.float64)
    if x0_logits.shape[-1] != s.K:
        raise ValueError(f"expected logits over K={s.K} real codes, got {x0_logits.shape[-1]}")
    if not np.all(np.isfinite(x0_logits)):
        raise ValueError("non-finite denoiser logits")
    return reverse_probs(softmax(x0_logits), x_t, t, s)


def terminal_distribution(shape, s: NoiseSchedule) -> np.ndarray:
    """Law of ``x_T`` when ``x_0`` is uniform over the real codes."""
    stay, unif, mask = s.cumulative_coefficients(s.T)
    probs = np.empty(tuple(shape) + (s.K + 1,))
    probs[..., : s.K] = stay / s.K + unif
    probs[..., s.K] = mask
    return probs


def sample(denoiser: Denoiser, cond, s: NoiseSchedule, shape, seed=None,
           return_trajectory: bool = False):
    """Run the reverse chain from ``t = T`` to ``0``.

    ``denoiser(x_t, t, cond)`` must return logits of shape ``shape + (K,)``.
    """
    rng = _rng(seed)
    shape = tuple(shape)
    x = draw_categorical(terminal_distribution(shape, s), rng)
    traj = [x] if return_trajectory else None
    for t in range(s.T, 0, -1):
        logits = np.asarray(denoiser(x, t, cond))
        if logits.shape != shape + (s.K,):
            raise ValueError(f"denoiser returned shape {logits.shape}, expected {shape + (s.K,)}")
        x = draw_categorical(reverse_step(logits, x, t, s), rng)
        if return_trajectory:
            traj.append(x)
    if np.any(x == s.K):
        raise RuntimeError("[MASK] survived to t=0; the schedule or denoiser is broken")
    return (x, traj) if return_trajectory else x


@dataclass(frozen=True)
class VLBTerms:
    total: float
    kl: float
    ce: float
    aux_weight: float


def vlb_loss(x0, t, x_t, x0_logits: np.ndarray, s: NoiseSchedule,
             aux_weight: float = 0.001) -> VLBTerms:
    """KL between the true posterior and the model kernel, plus weighted x0 cross-entropy.

    Both terms are summed over positions.  At ``t = 1`` the KL term reduces to
    the negative log-likelihood of ``x0`` under the model kernel.
    """
    x0, x_t = as_codes(x0), as_codes(x_t)
    x0_logits = np.asarray(x0_logits, dtype=np.float64)
    if x0_logits.shape != x0.shape + (s.K,):
        raise ValueError(f"logits shape {x0_logits.shape} != {x0.shape + (s.K,)}")
    q = posterior(x_t, x0, t, s)
    p = reverse_step(x0_logits, x_t, t, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * (np.log(np.where(q > 0, q, 1.0)) - np.log(p)), 0.0)
    # rounding can leave -1e-17 where q == p
    kl_pos = np.maximum(terms.sum(axis=-1), 0.0)
    z = x0_logits - x0_logits.max(axis=-1, keepdims=True)
    logp0 = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ce_pos = -np.take_along_axis(logp0, x0[..., None], axis=-1)[..., 0]
    for name, arr in (("KL", kl_pos), ("CE", ce_pos)):
        if not np.all(np.isfinite(arr)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
            raise FloatingPointError(f"non-finite {name} term at position {bad}")
    kl = float(kl_pos.sum())
    ce = float(ce_pos.sum())
    return VLBTerms(total=kl + aux_weight * ce, kl=kl, ce=ce, aux_weight=aux_weight)
