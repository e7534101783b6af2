"""Finite-difference verification batteries.

Each check builds a small randomized configuration, compares analytic
gradients against central differences, and reports the worst relative
error. The batteries cover every layer type, every loss, and the full
joint objective routed through the delta/splice operator into a frozen
classifier, in both tap variants and in hard-target mode.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .dsp import ContextExpander, FeatureGeometry, expand_static
from .models import SpectralClassifier, TAP_POST_SOFTMAX, TAP_PRE_SOFTMAX, freeze
from .nn.gradcheck import relative_error
from .pipeline import joint_losses, joint_step

log = logging.getLogger(__name__)

REL_ERR_LIMIT = 1e-4

_TOY_GEOMETRY = FeatureGeometry(n_bins=3, delta_window=2, context=2)


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= REL_ERR_LIMIT


def _mse_against(target):
    return lambda out: _unpack(nn.mse_loss(out, target))


def _ce_against(labels):
    return lambda out: _unpack(nn.cross_entropy_loss(out, labels))


def _unpack(pair):
    lv, grad = pair
    return lv.value, grad


def _check_network(name, build, n_draws, base_seed):
    worst = 0.0
    for draw in range(n_draws):
        rng = np.random.default_rng([base_seed, draw])
        network, x, loss_fn, train = build(rng)
        worst = max(worst, nn.gradient_check(network, x, loss_fn, train=train, mask_seed=draw))
    return CheckResult(name, worst)


def _dense_mse(rng):
    net = nn.Network([nn.Dense.init(9, 4, rng)])
    x = rng.normal(size=(5, 9))
    return net, x, _mse_against(rng.normal(size=(5, 4))), True


def _dense_relu_mse(rng):
    net = nn.Network([nn.Dense.init(9, 8, rng), nn.Relu(), nn.Dense.init(8, 3, rng)])
    x = rng.normal(size=(6, 9))
    return net, x, _mse_against(rng.normal(size=(6, 3))), True


def _deep_train_stack_mse(rng):
    net = nn.Network([
        nn.Dense.init(10, 8, rng),
        nn.BatchNorm(8),
        nn.LeakyRelu(),
        nn.Dropout(0.4),
        nn.Dense.init(8, 5, rng),
    ])
    x = rng.normal(size=(7, 10))
    return net, x, _mse_against(rng.normal(size=(7, 5))), True


def _softmax_cross_entropy(rng):
    net = nn.Network([
        nn.Dense.init(9, 6, rng),
        nn.BatchNorm(6),
        nn.Relu(),
        nn.Dense.init(6, 5, rng),
    ])
    x = rng.normal(size=(6, 9))
    return net, x, _ce_against(rng.integers(0, 5, size=6)), True


def _batchnorm_inference_mse(rng):
    bn = nn.BatchNorm(6)
    bn.running_mean = rng.normal(size=6)
    bn.running_var = rng.uniform(0.5, 2.0, size=6)
    net = nn.Network([nn.Dense.init(7, 6, rng), bn, nn.LeakyRelu(), nn.Dense.init(6, 4, rng)])
    x = rng.normal(size=(5, 7))
    return net, x, _mse_against(rng.normal(size=(5, 4))), False


def _softmax_layer_mse(rng):
    net = nn.Network([nn.Dense.init(6, 5, rng), nn.Softmax()])
    x = rng.normal(size=(4, 6))
    return net, x, _mse_against(rng.random(size=(4, 5))), True


def _toy_joint_setup(rng, geometry=_TOY_GEOMETRY, freeze_stats=True):
    n_frames = 9
    n_classes = 4
    d_in = geometry.dim_spliced
    noisy = rng.normal(size=(n_frames, geometry.n_bins))
    clean = rng.normal(size=(n_frames, geometry.n_bins))
    labels = rng.integers(0, n_classes, size=n_frames)
    mapper = nn.Network([
        nn.Dense.init(d_in, 6, rng),
        nn.BatchNorm(6),
        nn.Relu(),
        nn.Dropout(0.5),
        nn.Dense.init(6, geometry.n_bins, rng),
    ])
    # non-trivial running statistics, then optionally pin them the way
    # per-utterance fine-tuning does
    mapper.forward(rng.normal(size=(16, d_in)), train=True)
    mapper.set_frozen_batchnorm_stats(freeze_stats)
    clf_net = nn.Network([
        nn.Dense.init(d_in, 8, rng),
        nn.BatchNorm(8),
        nn.LeakyRelu(),
        nn.Dense.init(8, n_classes, rng),
    ])
    clf_net.forward(rng.normal(size=(16, d_in)), train=True)
    classifier = freeze(SpectralClassifier(clf_net, n_classes))
    expander = ContextExpander(n_frames, geometry)
    x = expand_static(noisy, geometry)
    return mapper, classifier, expander, x, clean, labels


def joint_objective_check(
    tap: str = TAP_PRE_SOFTMAX,
    alpha: float = 0.7,
    hard: bool = False,
    seed: int = 0,
    h: float = 1e-5,
    geometry: FeatureGeometry = _TOY_GEOMETRY,
    freeze_stats: bool = True,
) -> float:
    """Full joint objective vs central differences over mapper parameters.

    Exercises the mapper in train mode (pinned dropout masks, restored
    batch-norm statistics), the expander adjoint, and gradient flow
    through the frozen classifier for the chosen tap or hard targets.
    `freeze_stats=True` mirrors the per-utterance training configuration;
    False routes through live batch statistics instead.
    """
    rng = np.random.default_rng([seed, 0x10])
    mapper, classifier, expander, x, clean, labels = _toy_joint_setup(
        rng, geometry, freeze_stats
    )
    stats = [
        (l, l.running_mean.copy(), l.running_var.copy())
        for l in mapper.layers
        if isinstance(l, nn.BatchNorm)
    ]

    def restore():
        for layer, mean, var in stats:
            layer.running_mean = mean.copy()
            layer.running_var = var.copy()

    def objective() -> float:
        mapper.reseed_dropout(seed)
        _, _, lj = joint_losses(
            mapper, classifier, expander, x, clean,
            tap=tap, alpha=alpha, labels=labels, hard=hard, train=True,
        )
        restore()
        return lj

    mapper.reseed_dropout(seed)
    joint_step(
        mapper, classifier, expander, x, clean,
        tap=tap, alpha=alpha, labels=labels, hard=hard, train=True,
    )
    restore()
    analytic = [g.copy() for g in mapper.grads()]

    worst = 0.0
    for p, a in zip(mapper.params(), analytic):
        flat_p = p.reshape(-1)
        flat_a = a.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = objective()
            flat_p[i] = orig - h
            down = objective()
            flat_p[i] = orig
            worst = max(worst, relative_error(flat_a[i], (up - down) / (2.0 * h)))
    return worst


def _check_joint(name, n_draws, base_seed, **kwargs):
    worst = 0.0
    for draw in range(n_draws):
        worst = max(worst, joint_objective_check(seed=base_seed + draw, **kwargs))
    return CheckResult(name, worst)


def run_gradient_battery(n_draws: int = 20, seed: int = 0) -> list[CheckResult]:
    """Every layer type and every loss, including the routed joint objective."""
    results = [
        _check_network("dense_mse", _dense_mse, n_draws, seed),
        _check_network("dense_relu_mse", _dense_relu_mse, n_draws, seed + 1),
        _check_network("batchnorm_dropout_leaky_mse", _deep_train_stack_mse, n_draws, seed + 2),
        _check_network("softmax_cross_entropy", _softmax_cross_entropy, n_draws, seed + 3),
        _check_network("batchnorm_inference_mse", _batchnorm_inference_mse, n_draws, seed + 4),
        _check_network("softmax_layer_mse", _softmax_layer_mse, n_draws, seed + 5),
        _check_joint("joint_pre_softmax", n_draws, seed + 6, tap=TAP_PRE_SOFTMAX, alpha=0.7),
        _check_joint("joint_post_softmax", n_draws, seed + 7, tap=TAP_POST_SOFTMAX,
                     alpha=40.0, freeze_stats=False),
        _check_joint("joint_hard_targets", n_draws, seed + 8, alpha=0.5, hard=True),
    ]
    for r in results:
        log.info("gradient check %-28s max rel err %.3e", r.name, r.max_rel_err)
    return results
