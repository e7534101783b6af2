"""Minimal feed-forward network engine with exact backpropagation."""

from .checkpoint import (
    deserialize_network,
    load_checkpoint,
    save_checkpoint,
    serialize_network,
)
from .gradcheck import gradient_check, relative_error
from .layers import (
    BatchNorm,
    Dense,
    Dropout,
    LeakyRelu,
    Relu,
    Softmax,
    he_uniform,
    leaky_relu,
    relu,
    softmax,
    softmax_input_grad,
)
from .losses import LossValue, cross_entropy_loss, mse_loss
from .network import Network
from .optim import Adam, Sgd, make_optimizer

__all__ = [
    "Adam",
    "BatchNorm",
    "Dense",
    "Dropout",
    "LeakyRelu",
    "LossValue",
    "Network",
    "Relu",
    "Sgd",
    "Softmax",
    "cross_entropy_loss",
    "deserialize_network",
    "gradient_check",
    "he_uniform",
    "leaky_relu",
    "load_checkpoint",
    "make_optimizer",
    "mse_loss",
    "relative_error",
    "relu",
    "save_checkpoint",
    "serialize_network",
    "softmax",
    "softmax_input_grad",
]
