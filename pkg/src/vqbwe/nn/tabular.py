"""Closed-form denoiser for small, fully enumerable toy distributions."""
from __future__ import annotations

from collections.abc import Hashable, Sequence

import numpy as np

from ..schedule import NoiseSchedule

# finite stand-in for log(0) so downstream finiteness checks still hold
LOG_ZERO = -1e30


class TabularDenoiser:
    """Exact ``p(x0 | x_t, cond)`` from counted clean data, assuming positions are
    conditionally independent given the condition key.

    With ``per_position=False`` one distribution over codes is pooled across all
    positions for each key; otherwise a table is kept for every position.
    """

    def __init__(self, schedule: NoiseSchedule, per_position: bool = False):
        self.schedule = schedule
        self.per_position = per_position
        self.tables: dict[Hashable, np.ndarray] = {}

    def fit(self, x0: np.ndarray, keys: Sequence[Hashable] | None = None) -> "TabularDenoiser":
        x0 = np.asarray(x0)
        K = self.schedule.K
        if np.any(x0 < 0) or np.any(x0 >= K):
            raise ValueError(f"clean codes must lie in [0, {K})")
        if keys is None:
            keys = [None] * len(x0)
        if len(keys) != len(x0):
            raise ValueError("one condition key per sample is required")
        counts: dict[Hashable, np.ndarray] = {}
        for key, sample in zip(keys, x0):
            onehot = np.eye(K)[sample]
            if not self.per_position:
                onehot = onehot.reshape(-1, K).sum(axis=0)
            counts[key] = counts.get(key, 0) + onehot
        self.tables = {
            k: c / c.sum(axis=-1, keepdims=True) for k, c in counts.items()
        }
        return self

    def x0_probs(self, x_t, t: int, cond: Hashable = None) -> np.ndarray:
        if cond not in self.tables:
            raise KeyError(f"unseen condition key {cond!r}")
        s = self.schedule
        x_t = np.asarray(x_t)
        prior = self.tables[cond]
        stay, unif, mask = s.cumulative_coefficients(t)
        K = s.K
        # q(x_t | x0 = k) for every k
        is_mask = (x_t == K)[..., None]
        onehot = np.eye(K)[np.where(x_t == K, 0, x_t)]
        like = np.where(is_mask, mask, unif + stay * onehot)
        post = like * prior
        z = post.sum(axis=-1, keepdims=True)
        if np.any(z <= 0):
            raise ValueError("x_t is impossible under the fitted distribution")
        return post / z

    def __call__(self, x_t, t: int, cond: Hashable = None) -> np.ndarray:
        p = self.x0_probs(x_t, t, cond)
        with np.errstate(divide="ignore"):
            return np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), LOG_ZERO)


def tabular_denoiser(x_t, t: int, cond_key, model: TabularDenoiser) -> np.ndarray:
    """Functional form of ``TabularDenoiser.__call__``."""
    return model(x_t, t, cond_key)
