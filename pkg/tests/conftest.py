"""Shared mini-scale builders for pipeline tests.

The production networks (8481-dim inputs) are exercised by the CLI and
acceptance tests; unit tests use a shrunken feature geometry with the
same layer structure so every code path runs in milliseconds.
"""

import numpy as np
import pytest

from mimicmap import data, nn
from mimicmap.data import UtteranceFeatures
from mimicmap.dsp import FeatureGeometry
from mimicmap.models import SpectralClassifier, SpectralMapper

MINI_GEOMETRY = FeatureGeometry(n_bins=4, delta_window=2, context=2)
MINI_CLASSES = 3


def make_mini_mapper(seed, geometry=MINI_GEOMETRY, hidden=10, dropout=0.2):
    rng = np.random.default_rng([seed, 1])
    net = nn.Network([
        nn.Dense.init(geometry.dim_spliced, hidden, rng),
        nn.BatchNorm(hidden),
        nn.Relu(),
        nn.Dropout(dropout),
        nn.Dense.init(hidden, geometry.n_bins, rng),
    ])
    net.reseed_dropout(seed)
    return SpectralMapper(net)


def make_mini_classifier(seed, geometry=MINI_GEOMETRY, n_classes=MINI_CLASSES, hidden=12):
    rng = np.random.default_rng([seed, 2])
    net = nn.Network([
        nn.Dense.init(geometry.dim_spliced, hidden, rng),
        nn.BatchNorm(hidden),
        nn.LeakyRelu(),
        nn.Dense.init(hidden, n_classes, rng),
    ])
    return SpectralClassifier(net, n_classes)


def make_mini_corpus(
    seed,
    n_utts=12,
    geometry=MINI_GEOMETRY,
    n_classes=MINI_CLASSES,
    noise_scale=0.4,
    frame_range=(9, 15),
):
    """Fabricated parallel features with learnable class structure.

    Clean frames wander between a few anchor patterns so k-means labels
    are predictable from the frames themselves; noisy frames add white
    noise, giving the mapper a denoisable target.
    """
    rng = np.random.default_rng([seed, 3])
    anchors = rng.normal(scale=2.0, size=(n_classes, geometry.n_bins))
    cleans = []
    snrs = []
    for i in range(n_utts):
        t = int(rng.integers(*frame_range))
        which = rng.integers(0, n_classes, size=t)
        clean = anchors[which] + rng.normal(scale=0.3, size=(t, geometry.n_bins))
        cleans.append(clean)
        snrs.append(data.SNR_GRID_DB[i % len(data.SNR_GRID_DB)])
    label_seqs, _ = data.generate_labels(cleans, n_classes, seed)
    utts = []
    for i, clean in enumerate(cleans):
        noisy = clean + rng.normal(scale=noise_scale, size=clean.shape)
        utts.append(
            UtteranceFeatures(
                utt_id=f"mini{i:03d}",
                snr_db=snrs[i],
                clean_logmag=clean,
                noisy_logmag=noisy,
                labels=label_seqs[i],
            )
        )
    return utts


@pytest.fixture
def mini_corpus():
    return make_mini_corpus(seed=0)
