"""First-order optimizers over named parameter tensors."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor


class SGD:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-2):
        self.params = params
        self.lr = lr

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """Apply one update and zero the gradients.

        ``grads`` overrides ``p.grad`` for the listed names, which is how the
        shared trainer injects combined gradients.
        """
        for name, p in self.params.items():
            g = _grad(name, p, grads)
            if g is not None:
                p.data -= self.lr * g
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class Adam(SGD):
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip: float | None = 5.0):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip = clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        self.t += 1
        gs = {k: _grad(k, p, grads) for k, p in self.params.items()}
        scale = 1.0
        if self.clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in gs.values() if g is not None))
            if norm > self.clip:
                scale = self.clip / norm
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = gs[k]
            p.grad = None
            if g is None:
                continue
            g = g * scale
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}


def _grad(name, p, override):
    if override is not None and name in override:
        return override[name]
    return p.grad


def make_optimizer(kind: str, params: dict[str, Tensor], lr: float):
    if kind == "adam":
        return Adam(params, lr)
    if kind == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")
