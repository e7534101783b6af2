"""Gradient-descent optimizers over in-place parameter arrays."""

import numpy as np

from ..errors import DivergenceError

DEFAULT_LR = 1e-4


def _check_finite(grads: list[np.ndarray]) -> None:
    for g in grads:
        if not np.isfinite(g).all():
            raise DivergenceError("diverged: non-finite gradient")


class Sgd:
    """Stochastic gradient descent, optionally with classical momentum."""

    def __init__(self, params: list[np.ndarray], lr: float = DEFAULT_LR, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(p) for p in params] if momentum else None

    def step(self, grads: list[np.ndarray]) -> None:
        _check_finite(grads)
        if self._velocity is None:
            for p, g in zip(self.params, grads):
                p -= self.lr * g
            return
        for p, g, v in zip(self.params, grads, self._velocity):
            v *= self.momentum
            v += g
            p -= self.lr * v


class Adam:
    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = DEFAULT_LR,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]
        self._t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        _check_finite(grads)
        self._t += 1
        c1 = 1.0 - self.beta1 ** self._t
        c2 = 1.0 - self.beta2 ** self._t
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def make_optimizer(
    params: list[np.ndarray],
    kind: str = "adam",
    lr: float = DEFAULT_LR,
    momentum: float = 0.9,
):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return Sgd(params, lr=lr, momentum=momentum)
    raise ValueError(f"unknown optimizer {kind!r}")
