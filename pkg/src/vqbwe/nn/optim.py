"""Adam and a decay-on-plateau learning-rate rule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 3e-5,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = params
        self.lr = float(lr)
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.lr == 0.0:
                continue
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)


@dataclass
class PlateauDecay:
    """Multiply the learning rate by ``factor`` once validation loss has failed to
    beat the best value by ``threshold`` for ``patience`` consecutive epochs."""

    factor: float = 0.8
    patience: int = 2
    threshold: float = 1e-4
    best: float = float("inf")
    bad_epochs: int = 0
    history: list = field(default_factory=list)

    def update(self, val_loss: float, lr: float) -> float:
        self.history.append(float(val_loss))
        if val_loss < self.best - self.threshold:
            self.best = float(val_loss)
            self.bad_epochs = 0
            return lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.bad_epochs = 0
            return lr * self.factor
        return lr

    def state(self) -> dict:
        return {"best": self.best, "bad_epochs": self.bad_epochs, "history": list(self.history)}

    def load(self, state: dict) -> None:
        self.best = float(state["best"])
        self.bad_epochs = int(state["bad_epochs"])
        self.history = [float(h) for h in state["history"]]
