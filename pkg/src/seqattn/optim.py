"""Adam with bias-corrected moment estimates."""
from __future__ import annotations

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


def adam_step(param, grad, m, v, t, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, name="param"):
    """Update ``param``, ``m`` and ``v`` in place for step ``t`` (1-based)."""
    if t < 1:
        raise ValueError(f"Adam step counter must be >= 1, got {t}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(f"non-finite gradient for {name}")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grad_norm(self):
        return float(np.sqrt(np.sum([np.sum(p.grad ** 2) for p in self.params.values() if p.grad is not None])))

    def step(self):
        self.t += 1
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad * scale
            adam_step(p.data, g, self.m[name], self.v[name], self.t, self.lr, self.beta1, self.beta2, self.eps, name)
