"""Finite-difference verification of analytic gradients.

The checker treats a network plus loss as a scalar function of every
parameter element and every input element, probes each one with a central
difference, and reports the worst relative disagreement with the analytic
backward pass. Stateful layers are handled by pinning dropout masks
(reseeding before every evaluation) and restoring batch-norm running
statistics after every evaluation, so repeated probes see one fixed,
deterministic function.
"""

import numpy as np

from .layers import BatchNorm
from .network import Network

REL_ERR_DENOM_FLOOR = 1e-12
FD_NOISE_FLOOR = 1e-9


def relative_error(analytic: float, numeric: float, atol: float = FD_NOISE_FLOOR) -> float:
    """Relative disagreement with a floored denominator.

    Differences below `atol` count as zero: central differences carry
    roundoff noise of order eps * |loss| / h, which would otherwise
    dominate the ratio for structurally zero gradients (for example a
    bias feeding a train-mode batch norm).
    """
    diff = abs(analytic - numeric)
    if diff <= atol:
        return 0.0
    return diff / max(abs(analytic) + abs(numeric), REL_ERR_DENOM_FLOOR)


def _stats_snapshot(network: Network):
    return [
        (layer, layer.running_mean.copy(), layer.running_var.copy())
        for layer in network.layers
        if isinstance(layer, BatchNorm)
    ]


def _stats_restore(snapshot) -> None:
    for layer, mean, var in snapshot:
        layer.running_mean = mean.copy()
        layer.running_var = var.copy()


def gradient_check(
    network: Network,
    x: np.ndarray,
    loss_fn,
    h: float = 1e-5,
    train: bool = True,
    mask_seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn(output) -> (scalar, grad_wrt_output)`. Checks every parameter
    and every input element; intended for small networks (order 1e4
    parameters) in 64-bit arithmetic.
    """
    x = np.array(x, dtype=np.float64)
    snapshot = _stats_snapshot(network)

    def eval_loss(inp: np.ndarray) -> float:
        network.reseed_dropout(mask_seed)
        out = network.forward(inp, train=train)
        _stats_restore(snapshot)
        return loss_fn(out)[0]

    network.reseed_dropout(mask_seed)
    network.zero_grad()
    out = network.forward(x, train=train)
    _stats_restore(snapshot)
    _, grad_out = loss_fn(out)
    grad_x = network.backward(grad_out)

    worst = 0.0
    targets = list(zip(network.params(), network.grads())) + [(x, grad_x)]
    for values, analytic in targets:
        flat_v = values.reshape(-1)
        flat_a = analytic.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + h
            up = eval_loss(x)
            flat_v[i] = orig - h
            down = eval_loss(x)
            flat_v[i] = orig
            worst = max(worst, relative_error(flat_a[i], (up - down) / (2.0 * h)))
    return worst
