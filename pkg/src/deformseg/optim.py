"""Adaptive-moment optimizer with decoupled weight decay, and the LR schedule."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from base_lr at step 0 to 0 at the final step."""
    if total_steps <= 1:
        return base_lr if step == 0 else 0.0
    t = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


class AdamW:
    """Decoupled weight decay: the decay term never enters the moment estimates.

    Decay applies only to parameters of rank >= 2 (weight matrices and
    kernels); biases and normalization parameters are not decayed.
    """

    def __init__(self, params: list[Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.05):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else 0.0
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            new = p.data - lr * update
            if p.ndim >= 2 and self.weight_decay:
                new = new - lr * self.weight_decay * p.data
            p.data = new

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
