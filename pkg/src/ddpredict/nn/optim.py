"""Gradient-descent optimizers that respect ParamGroup freeze flags."""
from __future__ import annotations

import math

import numpy as np


def lr_at(base_lr, step, total_steps, schedule="constant"):
    if schedule == "constant" or total_steps <= 1:
        return base_lr
    if schedule == "cosine":
        frac = min(step, total_steps) / total_steps
        return 0.5 * base_lr * (1.0 + math.cos(math.pi * frac))
    raise ValueError(f"unknown lr schedule {schedule!r}")


class Optimizer:
    def __init__(self, groups, lr):
        self.groups = list(groups)
        self.lr = lr

    def params(self):
        for g in self.groups:
            if not g.trainable:
                continue
            for name, t in g.items():
                yield f"{g.name}.{name}", t

    def zero_grad(self):
        for g in self.groups:
            for t in g.tensors.values():
                t.grad = None

    def step(self, lr=None):
        raise NotImplementedError


class SGD(Optimizer):
    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        for _, t in self.params():
            if t.grad is not None:
                t.data -= lr * t.grad


class Adam(Optimizer):
    """Adaptive-moment updates; frozen groups are skipped entirely."""

    def __init__(self, groups, lr, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(groups, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.state = {}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for key, p in self.params():
            if p.grad is None:
                continue
            m, v = self.state.get(key, (None, None))
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad * p.grad
            self.state[key] = (m, v)
            if lr == 0.0:
                continue
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name, groups, lr):
    if name in ("adam", "adam_moments"):
        return Adam(groups, lr)
    if name == "sgd":
        return SGD(groups, lr)
    raise ValueError(f"unknown optimizer {name!r}")
