"""AdamW and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import ParamStore

ADAM_EPS = 1e-8


def adamw_update(theta, g, m, v, t: int, lr: float, beta1: float, beta2: float, wd: float = 0.0):
    """One AdamW step on arrays; returns (theta, m, v) without mutating inputs.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
    theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta).
    """
    if t < 1:
        raise ValueError("step counter t must be >= 1")
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    theta = theta - lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + wd * theta)
    return theta, m, v


class AdamW:
    def __init__(self, params: ParamStore, lr: float = 1e-4, betas=(0.5, 0.999), weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.wd = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params}
        self.v = {n: np.zeros_like(p.data) for n, p in params}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            theta, self.m[name], self.v[name] = adamw_update(
                p.data, g, self.m[name], self.v[name], self.t, self.lr, self.beta1, self.beta2, self.wd
            )
            p.data[...] = theta


@dataclass
class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without a relative improvement of ``threshold`` over the best loss."""

    lr: float
    factor: float = 0.5
    patience: int = 10
    threshold: float = 1e-4
    min_lr: float = 1e-6
    best: float = field(default=float("inf"))
    bad_epochs: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.factor < 1:
            raise ValueError("factor must be in (0, 1)")

    def step(self, loss: float) -> float:
        if loss < self.best * (1 - self.threshold):
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


def plateau_schedule(history, lr: float, factor: float = 0.5, patience: int = 10, threshold: float = 1e-4) -> float:
    """Learning rate after replaying a per-epoch loss history."""
    sched = PlateauSchedule(lr, factor, patience, threshold)
    for loss in history:
        sched.step(float(loss))
    return sched.lr
