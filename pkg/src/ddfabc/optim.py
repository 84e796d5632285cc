"""First-order optimizers over a dict of parameter arrays (updated in place)."""

from __future__ import annotations

import numpy as np


class Optimizer:
    def __init__(self, lr: float):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if params.keys() != grads.keys():
            raise ValueError("parameter and gradient keys differ")
        for k in params:
            if params[k].shape != grads[k].shape:
                raise ValueError(f"shape mismatch for {k}: {params[k].shape} vs {grads[k].shape}")
        self.t += 1
        for k in params:
            self._update(k, params[k], grads[k])

    def _update(self, key: str, p: np.ndarray, g: np.ndarray) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self, key, p, g):
        p -= self.lr * g


class Adam(Optimizer):
    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def _moments(self, key, g):
        if key not in self.m:
            self.m[key] = np.zeros_like(g)
            self.v[key] = np.zeros_like(g)
        m, v = self.m[key], self.v[key]
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * (g * g)
        return m / (1.0 - self.beta1**self.t), v / (1.0 - self.beta2**self.t)

    def _update(self, key, p, g):
        m_hat, v_hat = self._moments(key, g)
        p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class QHAdam(Adam):
    """Quasi-hyperbolic Adam (Ma & Yarats); nus=(1, 1) is plain Adam."""

    def __init__(self, lr: float = 1e-3, betas=(0.995, 0.999), nus=(0.7, 1.0), eps: float = 1e-8):
        super().__init__(lr, betas, eps)
        self.nu1, self.nu2 = nus

    def _update(self, key, p, g):
        m_hat, v_hat = self._moments(key, g)
        num = (1.0 - self.nu1) * g + self.nu1 * m_hat
        den = np.sqrt((1.0 - self.nu2) * (g * g) + self.nu2 * v_hat) + self.eps
        p -= self.lr * num / den


def make_optimizer(kind: str, lr: float, betas=None, nus=None, eps: float = 1e-8) -> Optimizer:
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr, betas or (0.9, 0.999), eps)
    if kind == "qhadam":
        return QHAdam(lr, betas or (0.995, 0.999), nus or (0.7, 1.0), eps)
    raise ValueError(f"unknown optimizer {kind!r}")
