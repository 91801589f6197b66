"""Noise schedules and transition matrices for mask-and-uniform discrete diffusion.

State index ``K`` (zero-based) is the absorbing ``[MASK]`` state; indices
``0..K-1`` are real codes.  Matrices are column-stochastic: column ``j`` is the
distribution of the next state given the current state ``j``.

The single-step matrices form a family closed under multiplication, so every
cumulative product is described by three numbers per timestep: the weight of
staying on the starting code, a uniform weight spread over every real code,
and the weight absorbed into ``[MASK]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "linear_schedule",
    "transition_matrix",
    "cumulative_transition",
    "explicit_cumulative",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step corruption probabilities for ``t = 1..T``.

    Arrays ``alpha``, ``beta`` and ``gamma`` are indexed by ``t - 1``.  The
    cumulative coefficient arrays ``stay_bar``, ``uniform_bar`` and
    ``mask_bar`` are indexed by ``t`` directly, with ``t = 0`` the identity.
    """

    T: int
    K: int
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    stay_bar: np.ndarray = field(init=False, repr=False)
    uniform_bar: np.ndarray = field(init=False, repr=False)
    mask_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        for name, arr in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
            if arr.shape != (self.T,):
                raise ValueError(f"{name} must have shape ({self.T},), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        if np.any(beta < 0) or np.any(beta >= 1.0 / self.K):
            raise ValueError("beta_t must lie in [0, 1/K)")
        if np.any(gamma < 0) or np.any(gamma >= 1.0):
            raise ValueError("gamma_t must lie in [0, 1)")
        if np.any(alpha < 0):
            bad = int(np.argmax(alpha < 0)) + 1
            raise ValueError(f"alpha_t < 0 at t={bad}; reduce gamma_max or beta_max")
        if not np.allclose(alpha + self.K * beta + gamma, 1.0, rtol=0, atol=1e-12):
            raise ValueError("alpha_t + K*beta_t + gamma_t must equal 1")

        # Product of two family members: stay' = a*stay, uniform' = b*stay + (a + K b)*uniform,
        # mask' = g*stay + K g*uniform + mask.
        stay = np.ones(self.T + 1)
        unif = np.zeros(self.T + 1)
        mask = np.zeros(self.T + 1)
        for i in range(self.T):
            a, b, g = alpha[i], beta[i], gamma[i]
            stay[i + 1] = a * stay[i]
            unif[i + 1] = b * stay[i] + (a + self.K * b) * unif[i]
            mask[i + 1] = g * stay[i] + self.K * g * unif[i] + mask[i]

        for name, arr in (("alpha", alpha), ("beta", beta), ("gamma", gamma),
                          ("stay_bar", stay), ("uniform_bar", unif), ("mask_bar", mask)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def mask_index(self) -> int:
        return self.K

    @property
    def num_states(self) -> int:
        return self.K + 1

    def check_t(self, t, lo: int = 1):
        t_arr = np.asarray(t)
        if not np.issubdtype(t_arr.dtype, np.integer):
            raise TypeError(f"timestep must be an integer, got {t_arr.dtype}")
        if np.any(t_arr < lo) or np.any(t_arr > self.T):
            raise ValueError(f"timestep out of range [{lo}, {self.T}]: {t}")

    def step_coefficients(self, t):
        """``(alpha_t, beta_t, gamma_t)`` for ``t`` in ``1..T`` (scalar or array)."""
        self.check_t(t)
        i = np.asarray(t) - 1
        return self.alpha[i], self.beta[i], self.gamma[i]

    def cumulative_coefficients(self, t):
        """``(stay, uniform, mask)`` weights of the product ``Q_t ... Q_1``; ``t = 0`` allowed."""
        self.check_t(t, lo=0)
        i = np.asarray(t)
        return self.stay_bar[i], self.uniform_bar[i], self.mask_bar[i]


def linear_schedule(
    T: int,
    K: int,
    gamma_max: float,
    beta_max: float,
    beta_is_total: bool = False,
) -> NoiseSchedule:
    """Linear ramps ``gamma_t = gamma_max * t / T`` and ``beta_t = beta_max * t / T``.

    By default ``beta_max`` is the endpoint of the per-category ``beta_t``, so
    the total probability of uniform resampling at the last step is
    ``K * beta_max``.  With ``beta_is_total=True`` the endpoint refers to that
    total instead (``beta_T = beta_max / K``), which is the only reading under
    which ``gamma_max=0.9, beta_max=0.1`` stays valid for large codebooks.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if gamma_max < 0 or beta_max < 0:
        raise ValueError("ramp endpoints must be nonnegative")
    ramp = np.arange(1, T + 1, dtype=np.float64) / T
    gamma = gamma_max * ramp
    beta = (beta_max / K if beta_is_total else beta_max) * ramp
    alpha = 1.0 - K * beta - gamma
    if np.any(alpha < 0):
        raise ValueError(
            f"gamma_max={gamma_max:g}, beta_max={beta_max:g} (total={beta_is_total}) "
            f"with K={K} makes alpha_t negative"
        )
    return NoiseSchedule(T=T, K=K, alpha=alpha, beta=beta, gamma=gamma)


def _family_matrix(K: int, stay: float, unif: float, mask: float) -> np.ndarray:
    Q = np.zeros((K + 1, K + 1))
    Q[:K, :K] = unif
    Q[np.arange(K), np.arange(K)] += stay
    Q[K, :K] = mask
    Q[K, K] = 1.0
    return Q


def transition_matrix(s: NoiseSchedule, t: int) -> np.ndarray:
    """Dense single-step matrix ``Q_t`` of shape ``(K+1, K+1)``."""
    a, b, g = s.step_coefficients(t)
    return _family_matrix(s.K, float(a), float(b), float(g))


def cumulative_transition(s: NoiseSchedule, t: int) -> np.ndarray:
    """Dense ``Q_t Q_{t-1} ... Q_1`` from the cached closed-form coefficients."""
    s.check_t(t)
    stay, unif, mask = s.cumulative_coefficients(t)
    return _family_matrix(s.K, float(stay), float(unif), float(mask))


def explicit_cumulative(s: NoiseSchedule, t: int) -> np.ndarray:
    """Reference product of dense single-step matrices (slow; for checking)."""
    s.check_t(t)
    out = np.eye(s.K + 1)
    for step in range(1, t + 1):
        out = transition_matrix(s, step) @ out
    return out
