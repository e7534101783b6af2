"""Feed-forward layers with explicit forward/backward passes.

Every layer follows the same protocol: `forward(x, train)` caches what the
matching `backward(grad_out, param_grads)` needs, backward returns the
gradient w.r.t. the layer input, and parameter gradients are accumulated
(callers zero them between steps). All arithmetic is 64-bit.
"""

import numpy as np


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x > 0.0, x, slope * x)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax, computed with max subtraction for stability."""
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_input_grad(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of softmax given its output `probs`."""
    inner = np.sum(grad_out * probs, axis=-1, keepdims=True)
    return probs * (grad_out - inner)


def he_uniform(n_in: int, n_out: int, rng: np.random.Generator) -> np.ndarray:
    """He-style uniform init, suited to (leaky) ReLU stacks."""
    limit = np.sqrt(6.0 / n_in)
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class Dense:
    """Affine layer: forward is x @ W.T + b with W of shape (out, in)."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"inconsistent dense shapes {self.weights.shape} / {self.bias.shape}"
            )
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "Dense":
        return cls(he_uniform(n_in, n_out, rng), np.zeros(n_out))

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"expected (batch, {self.n_in}) input, got {x.shape}")
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, grad_out: np.ndarray, param_grads: bool = True) -> np.ndarray:
        if grad_out.shape != (self._x.shape[0], self.n_out):
            raise ValueError(f"gradient shape {grad_out.shape} does not match output")
        if param_grads:
            self.grad_weights += grad_out.T @ self._x
            self.grad_bias += grad_out.sum(axis=0)
        return grad_out @ self.weights

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.grad_weights, self.grad_bias]


class BatchNorm:
    """Per-feature normalization with train/inference statistics.

    Train mode normalizes by batch moments and folds them into running
    statistics; inference mode only reads the running statistics, so a
    frozen network never mutates state. The backward pass supports both
    modes (inference treats the statistics as constants).
    """

    def __init__(self, dim: int, momentum: float = 0.99, epsilon: float = 1e-5):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.epsilon = epsilon
        # fine-tuning mode: normalize by running statistics even in train
        # mode (single-utterance batches are too correlated to normalize by)
        self.freeze_stats = False
        self.grad_gamma = np.zeros(dim)
        self.grad_beta = np.zeros(dim)
        self._cache = None

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected (batch, {self.dim}) input, got {x.shape}")
        batch_stats = train and not self.freeze_stats
        if batch_stats:
            if x.shape[0] < 2:
                raise ValueError("degenerate batch: train-mode batch norm needs batch >= 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            xhat = (x - mean) * inv_std
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.epsilon)
            xhat = (x - self.running_mean) * inv_std
        self._cache = (xhat, inv_std, batch_stats)
        return self.gamma * xhat + self.beta

    def backward(self, grad_out: np.ndarray, param_grads: bool = True) -> np.ndarray:
        xhat, inv_std, used_batch_stats = self._cache
        if param_grads:
            self.grad_gamma += np.sum(grad_out * xhat, axis=0)
            self.grad_beta += np.sum(grad_out, axis=0)
        gx = grad_out * self.gamma
        if not used_batch_stats:
            return gx * inv_std
        n = grad_out.shape[0]
        return (inv_std / n) * (
            n * gx - np.sum(gx, axis=0) - xhat * np.sum(gx * xhat, axis=0)
        )

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.grad_gamma, self.grad_beta]


class Dropout:
    """Inverted dropout: kept units are rescaled by 1/(1-rate) in train mode."""

    def __init__(self, rate: float, seed: int = 0):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self._rng = np.random.default_rng(seed)
        self._mask = None

    def reseed(self, seed) -> None:
        self._rng = np.random.default_rng(seed)

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self._rng.random(x.shape) >= self.rate) / keep
        return x * self._mask

    def backward(self, grad_out: np.ndarray, param_grads: bool = True) -> np.ndarray:
        if self._mask is None:
            return grad_out
        return grad_out * self._mask

    def params(self):
        return []

    def grads(self):
        return []


class _Activation:
    def params(self):
        return []

    def grads(self):
        return []


class Relu(_Activation):
    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._pos = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, grad_out: np.ndarray, param_grads: bool = True) -> np.ndarray:
        return grad_out * self._pos


class LeakyRelu(_Activation):
    def __init__(self, slope: float = 0.01):
        self.slope = slope

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._pos = x > 0.0
        return np.where(self._pos, x, self.slope * x)

    def backward(self, grad_out: np.ndarray, param_grads: bool = True) -> np.ndarray:
        return np.where(self._pos, grad_out, self.slope * grad_out)


class Softmax(_Activation):
    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._out = softmax(x)
        return self._out

    def backward(self, grad_out: np.ndarray, param_grads: bool = True) -> np.ndarray:
        return softmax_input_grad(self._out, grad_out)
