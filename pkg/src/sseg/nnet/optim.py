"""Adam-style optimizer with step-decayed learning rate."""
from __future__ import annotations

import numpy as np

from .params import ModelParams


class Adam:
    """Adam with per-parameter moments and lr = base * decay^(step // decay_every)."""

    def __init__(
        self,
        params: ModelParams,
        lr: float = 0.5e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        decay: float = 0.8,
        decay_every: int = 500,
    ):
        self.params = params
        self.base_lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay = decay
        self.decay_every = decay_every
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}

    def current_lr(self) -> float:
        return self.base_lr * self.decay ** (self.step_count // self.decay_every)

    def zero_grad(self):
        self.params.zero_grad()

    def step(self):
        lr = self.current_lr()
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, tensor in self.params.tensors.items():
            g = tensor.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
