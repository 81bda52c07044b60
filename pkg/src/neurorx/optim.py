"""First-order optimizers acting in place on dictionaries of arrays."""

from __future__ import annotations

import numpy as np

__all__ = ["GradientDescent", "Adam", "make_optimizer"]


class GradientDescent:
    def __init__(self, params: dict, lr: float = 0.01):
        self.params = params
        self.lr = lr

    def step(self, grads: dict, keys=None):
        for k in keys if keys is not None else grads:
            self.params[k] -= self.lr * grads[k]


class Adam:
    """Adam (Kingma & Ba) with per-key step counters, so parameter groups that
    are updated on alternating epochs keep consistent bias correction."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = {k: 0 for k in params}

    def step(self, grads: dict, keys=None):
        for k in keys if keys is not None else grads:
            g = grads[k]
            self.t[k] += 1
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1 ** self.t[k])
            vh = self.v[k] / (1 - self.b2 ** self.t[k])
            self.params[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def make_optimizer(kind: str, params: dict, lr: float):
    if kind == "gd":
        return GradientDescent(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")
