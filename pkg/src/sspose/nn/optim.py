"""Deterministic optimizers over the shared parameter store."""

from __future__ import annotations

import numpy as np

from .tensor import AutodiffError, Tensor


class OptimizerError(AutodiffError):
    pass


class _Optimizer:
    def __init__(self, params: list[Tensor]):
        self.params = params

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def _check_grads(self):
        for p in self.params:
            if p.grad is None:
                p.zero_grad()
            if not np.all(np.isfinite(p.grad)):
                raise OptimizerError(f"non-finite gradient in parameter {p.name}")


class SGD(_Optimizer):
    def __init__(self, params, lr: float = 1e-2, momentum: float = 0.9):
        super().__init__(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self):
        self._check_grads()
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def describe(self):
        return {"kind": "sgd", "lr": self.lr, "momentum": self.momentum}

    def state_arrays(self):
        return list(self.velocity)

    def load_state_arrays(self, arrays):
        if len(arrays) != len(self.velocity):
            raise OptimizerError("SGD state tensor count mismatch")
        self.velocity = [a.astype(np.float64) for a in arrays]


class Adam(_Optimizer):
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        self._check_grads()
        self.t += 1
        b1t = 1 - self.beta1 ** self.t
        b2t = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad ** 2
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def describe(self):
        return {"kind": "adam", "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps, "t": self.t}

    def state_arrays(self):
        return list(self.m) + list(self.v)

    def load_state_arrays(self, arrays):
        n = len(self.m)
        if len(arrays) != 2 * n:
            raise OptimizerError("Adam state tensor count mismatch")
        self.m = [a.astype(np.float64) for a in arrays[:n]]
        self.v = [a.astype(np.float64) for a in arrays[n:]]


def make_optimizer(desc: dict, params) -> _Optimizer:
    """Factory used by checkpoint loading and config parsing."""
    kind = desc.get("kind", "adam")
    if kind == "sgd":
        return SGD(params, lr=desc.get("lr", 1e-2), momentum=desc.get("momentum", 0.9))
    if kind == "adam":
        opt = Adam(params, lr=desc.get("lr", 1e-3), beta1=desc.get("beta1", 0.9),
                   beta2=desc.get("beta2", 0.999), eps=desc.get("eps", 1e-8))
        opt.t = desc.get("t", 0)
        return opt
    raise OptimizerError(f"unknown optimizer kind {kind!r}")
