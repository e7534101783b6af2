"""Ordered-layer network container."""

import numpy as np

from .layers import BatchNorm, Dropout


class Network:
    """A sequential stack of layers acting on (batch, dim) matrices.

    A frozen network always runs in inference mode and never accumulates
    parameter gradients, but `backward` still propagates gradients to its
    input so upstream modules can train against its behavior.
    """

    def __init__(self, layers: list):
        self.layers = list(layers)
        self.frozen = False

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        mode = train and not self.frozen
        for layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        want_param_grads = not self.frozen
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out, param_grads=want_param_grads)
        return grad_out

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]

    def zero_grad(self) -> None:
        for g in self.grads():
            g[...] = 0.0

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def reseed_dropout(self, seed: int) -> None:
        """Give every dropout layer a fresh generator derived from `seed`.

        Mask streams then depend only on (seed, layer position, draw
        order within the run), never on earlier runs.
        """
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dropout):
                layer.reseed([int(seed), i])

    def set_frozen_batchnorm_stats(self, flag: bool) -> None:
        """Pin (or release) batch-norm running statistics for train mode.

        Per-utterance fine-tuning uses this: batch statistics of one
        utterance are too correlated to normalize by, and letting them
        drift into the running estimates would skew inference.
        """
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                layer.freeze_stats = flag
