"""In-place optimisers over (parameter, gradient) dictionaries."""
from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, params, lr=1e-2):
        self.params = params  # list of (param_dict, grad_dict)
        self.lr = lr
        self.steps = 0

    def step(self):
        self.steps += 1
        for p, g in self.params:
            for name in p:
                p[name] -= (self.lr * g[name]).astype(p[name].dtype, copy=False)


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.steps = 0
        self.m = [{k: np.zeros_like(v, dtype=np.float64) for k, v in p.items()} for p, _ in params]
        self.v = [{k: np.zeros_like(v, dtype=np.float64) for k, v in p.items()} for p, _ in params]

    def step(self):
        self.steps += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.steps
        c2 = 1 - b2 ** self.steps
        for (p, g), m, v in zip(self.params, self.m, self.v):
            for name in p:
                grad = g[name]
                m[name] *= b1
                m[name] += (1 - b1) * grad
                v[name] *= b2
                v[name] += (1 - b2) * np.square(grad, dtype=np.float64)
                update = self.lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + self.eps)
                p[name] -= update.astype(p[name].dtype, copy=False)


def make_optimizer(kind, params, lr):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind in ("sgd", "gd"):
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}; expected 'adam' or 'sgd'")


def optimizer_step(params, grads, lr=0.1):
    """Single plain gradient-descent update, returning new arrays."""
    return {k: params[k] - lr * grads[k] for k in params}
