"""Concrete model builders, weight freezing, and classifier taps.

Two networks share the 8481-dim spliced input:

* spectral mapper: 8481 -> 2048 -> 2048 -> 257 (ReLU, batch norm and
  dropout 0.5 between every layer, linear output) that regresses clean
  log-magnitude frames from noisy context windows;
* spectral classifier: 8481 -> 6 x 1024 -> C (Leaky ReLU, batch norm
  between all layers) that predicts a frame class from clean context
  windows. Once trained it is frozen and used as a fixed reference whose
  outputs the mapper learns to reproduce.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .dsp import DEFAULT_GEOMETRY

MAPPER_HIDDEN = 2048
MAPPER_DEPTH = 2
MAPPER_DROPOUT = 0.5
CLASSIFIER_HIDDEN = 1024
CLASSIFIER_DEPTH = 6

TAP_PRE_SOFTMAX = "pre_softmax"
TAP_POST_SOFTMAX = "post_softmax"
TAPS = (TAP_PRE_SOFTMAX, TAP_POST_SOFTMAX)

INPUT_DIM = DEFAULT_GEOMETRY.dim_spliced
OUTPUT_BINS = DEFAULT_GEOMETRY.n_bins


@dataclass
class SpectralMapper:
    network: nn.Network


@dataclass
class SpectralClassifier:
    network: nn.Network
    senone_count: int

    @property
    def frozen(self) -> bool:
        return self.network.frozen


def build_mapper(seed: int) -> SpectralMapper:
    rng = np.random.default_rng(seed)
    layers = []
    width_in = INPUT_DIM
    for _ in range(MAPPER_DEPTH):
        layers += [
            nn.Dense.init(width_in, MAPPER_HIDDEN, rng),
            nn.BatchNorm(MAPPER_HIDDEN),
            nn.Relu(),
            nn.Dropout(MAPPER_DROPOUT),
        ]
        width_in = MAPPER_HIDDEN
    layers.append(nn.Dense.init(width_in, OUTPUT_BINS, rng))
    net = nn.Network(layers)
    net.reseed_dropout(seed)
    return SpectralMapper(net)


def build_classifier(senone_count: int, seed: int) -> SpectralClassifier:
    if senone_count < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    layers = []
    width_in = INPUT_DIM
    for _ in range(CLASSIFIER_DEPTH):
        layers += [
            nn.Dense.init(width_in, CLASSIFIER_HIDDEN, rng),
            nn.BatchNorm(CLASSIFIER_HIDDEN),
            nn.LeakyRelu(),
        ]
        width_in = CLASSIFIER_HIDDEN
    layers.append(nn.Dense.init(width_in, senone_count, rng))
    return SpectralClassifier(nn.Network(layers), senone_count)


def freeze(classifier: SpectralClassifier) -> SpectralClassifier:
    """Lock the classifier: inference mode only, no parameter updates.

    Gradients still flow through to the input, which is what joint
    training needs.
    """
    classifier.network.frozen = True
    return classifier


def classifier_tap(classifier: SpectralClassifier, x: np.ndarray, tap: str) -> np.ndarray:
    """Output-layer representation: raw logits or softmax posteriors.

    Runs the network in inference mode and leaves its layer caches
    populated, so `classifier_tap_backward` can follow immediately.
    """
    if tap not in TAPS:
        raise ValueError(f"unknown tap {tap!r}")
    logits = classifier.network.forward(x, train=False)
    return nn.softmax(logits) if tap == TAP_POST_SOFTMAX else logits


def classifier_tap_backward(
    classifier: SpectralClassifier, tap: str, tap_out: np.ndarray, grad_out: np.ndarray
) -> np.ndarray:
    """Gradient of a tap output w.r.t. the classifier input.

    Must be called right after `classifier_tap` on the same input;
    `tap_out` is that call's return value.
    """
    if tap == TAP_POST_SOFTMAX:
        grad_out = nn.softmax_input_grad(tap_out, grad_out)
    return classifier.network.backward(grad_out)


def predict_labels(classifier: SpectralClassifier, x: np.ndarray) -> np.ndarray:
    return np.argmax(classifier.network.forward(x, train=False), axis=1)


def model_card(network: nn.Network, **extra) -> dict:
    """Architecture summary suitable for a JSON sidecar."""
    layers = []
    for layer in network.layers:
        if isinstance(layer, nn.Dense):
            layers.append({"kind": "dense", "in": layer.n_in, "out": layer.n_out})
        elif isinstance(layer, nn.BatchNorm):
            layers.append({"kind": "batch_norm", "dim": layer.dim})
        elif isinstance(layer, nn.Dropout):
            layers.append({"kind": "dropout", "rate": layer.rate})
        elif isinstance(layer, nn.LeakyRelu):
            layers.append({"kind": "leaky_relu", "slope": layer.slope})
        elif isinstance(layer, nn.Relu):
            layers.append({"kind": "relu"})
        elif isinstance(layer, nn.Softmax):
            layers.append({"kind": "softmax"})
    card = {"layers": layers, "n_params": network.n_params()}
    card.update(extra)
    return card
