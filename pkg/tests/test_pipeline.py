import numpy as np
import pytest

from conftest import (
    MINI_CLASSES,
    MINI_GEOMETRY,
    make_mini_classifier,
    make_mini_corpus,
    make_mini_mapper,
)
from mimicmap import nn, pipeline
from mimicmap.dsp import ContextExpander, expand_static
from mimicmap.errors import DivergenceError
from mimicmap.models import freeze
from mimicmap.report import check_joint_identity


def cfg_for(stage, **kw):
    base = dict(stage=stage, seed=7, n_classes=MINI_CLASSES, lr=1e-2, batch_size=32)
    base.update(kw)
    return pipeline.StageConfig(**base)


class TestTrainClassifier:
    def test_learns_above_chance(self, mini_corpus):
        cfg = cfg_for(pipeline.STAGE_CLASSIFIER, epochs=25, patience=0)
        clf, rep = pipeline.train_classifier(
            mini_corpus, cfg, MINI_GEOMETRY, classifier=make_mini_classifier(1)
        )
        final = rep.final()
        assert final["holdout_accuracy"] >= 2.0 / MINI_CLASSES  # chance is 1/3

    def test_zero_epochs_returns_initialization(self, mini_corpus):
        clf = make_mini_classifier(2)
        before = nn.serialize_network(clf.network, {})
        _, rep = pipeline.train_classifier(
            mini_corpus, cfg_for(pipeline.STAGE_CLASSIFIER, epochs=0), MINI_GEOMETRY, clf
        )
        assert nn.serialize_network(clf.network, {}) == before
        assert [r["epoch"] for r in rep.records] == [0]

    def test_same_seed_identical_report(self, mini_corpus):
        def run():
            _, rep = pipeline.train_classifier(
                make_mini_corpus(seed=0),
                cfg_for(pipeline.STAGE_CLASSIFIER, epochs=4),
                MINI_GEOMETRY,
                make_mini_classifier(3),
            )
            return rep.records

        assert run() == run()

    def test_label_length_mismatch_rejected(self, mini_corpus):
        broken = make_mini_corpus(seed=1, n_utts=4)
        broken[2].labels = broken[2].labels[:-1]
        with pytest.raises(ValueError, match="labels"):
            pipeline.train_classifier(
                broken, cfg_for(pipeline.STAGE_CLASSIFIER, epochs=1), MINI_GEOMETRY,
                make_mini_classifier(4),
            )


class TestPretrainMapper:
    def test_identity_corpus_improves_tenfold(self):
        # noisy == clean: the mapper only has to learn a projection
        utts = make_mini_corpus(seed=2, n_utts=16, noise_scale=0.0)
        cfg = cfg_for(pipeline.STAGE_PRETRAIN, epochs=60, patience=0)
        _, rep = pipeline.pretrain_mapper(utts, cfg, MINI_GEOMETRY, make_mini_mapper(5))
        untrained = rep.records[0]["holdout_loss_f"]
        trained = rep.final()["holdout_loss_f"]
        assert trained < untrained / 10.0

    def test_epoch_means_non_increasing_early(self):
        utts = make_mini_corpus(seed=3, n_utts=16)
        cfg = cfg_for(pipeline.STAGE_PRETRAIN, epochs=5, patience=0)
        _, rep = pipeline.pretrain_mapper(utts, cfg, MINI_GEOMETRY, make_mini_mapper(6))
        losses = [r["train_loss_f"] for r in rep.records[1:]]
        for a, b in zip(losses, losses[1:]):
            assert b <= a * 1.05  # small tolerance for stochastic masks

    def test_same_seed_bit_identical_checkpoint(self):
        def run():
            mapper, _ = pipeline.pretrain_mapper(
                make_mini_corpus(seed=4),
                cfg_for(pipeline.STAGE_PRETRAIN, epochs=3),
                MINI_GEOMETRY,
                make_mini_mapper(7),
            )
            return nn.serialize_network(mapper.network, {})

        assert run() == run()

    def test_utterance_mode_runs(self):
        utts = make_mini_corpus(seed=5)
        cfg = cfg_for(pipeline.STAGE_PRETRAIN, epochs=2, batch_mode="utterance")
        _, rep = pipeline.pretrain_mapper(utts, cfg, MINI_GEOMETRY, make_mini_mapper(8))
        assert len(rep.records) == 3

    def test_per_snr_breakdown_logged(self, mini_corpus):
        cfg = cfg_for(pipeline.STAGE_PRETRAIN, epochs=1)
        _, rep = pipeline.pretrain_mapper(
            mini_corpus, cfg, MINI_GEOMETRY, make_mini_mapper(9)
        )
        final = rep.final()
        assert set(final["holdout_mse_noisy_by_snr"]) == set(
            final["holdout_mse_enhanced_by_snr"]
        )
        assert len(final["holdout_mse_noisy_by_snr"]) == 6

    def test_divergence_reported_with_breakdown(self):
        utts = make_mini_corpus(seed=6)
        cfg = cfg_for(
            pipeline.STAGE_PRETRAIN, epochs=50, optimizer="sgd", lr=1e22, patience=0
        )
        with pytest.raises(DivergenceError) as exc, np.errstate(over="ignore"):
            pipeline.pretrain_mapper(utts, cfg, MINI_GEOMETRY, make_mini_mapper(10))
        err = exc.value
        assert err.details["stage"] == pipeline.STAGE_PRETRAIN
        assert "step" in err.details
        assert err.report.diverged


class TestTrainJoint:
    def frozen_classifier(self, utts, seed=11):
        cfg = cfg_for(pipeline.STAGE_CLASSIFIER, epochs=10)
        clf, _ = pipeline.train_classifier(
            utts, cfg, MINI_GEOMETRY, make_mini_classifier(seed)
        )
        return freeze(clf)

    def test_requires_frozen_classifier(self, mini_corpus):
        clf = make_mini_classifier(12)
        with pytest.raises(ValueError, match="frozen"):
            pipeline.train_joint(
                make_mini_mapper(13), clf, mini_corpus,
                cfg_for(pipeline.STAGE_JOINT, epochs=1), MINI_GEOMETRY,
            )

    def test_joint_identity_holds_in_every_record(self, mini_corpus):
        clf = self.frozen_classifier(mini_corpus)
        cfg = cfg_for(pipeline.STAGE_JOINT, epochs=3, alpha=0.1, tap="pre_softmax")
        _, rep = pipeline.train_joint(
            make_mini_mapper(14), clf, mini_corpus, cfg, MINI_GEOMETRY
        )
        assert check_joint_identity(rep.records) == []
        for r in rep.records[1:]:
            gap = abs(
                r["train_loss_joint"] - (r["train_loss_f"] + 0.1 * r["train_loss_m"])
            )
            assert gap <= 1e-9

    def test_classifier_bytes_verified_unchanged(self, mini_corpus):
        clf = self.frozen_classifier(mini_corpus)
        before = nn.serialize_network(clf.network, {})
        cfg = cfg_for(pipeline.STAGE_JOINT, epochs=2)
        _, rep = pipeline.train_joint(
            make_mini_mapper(15), clf, mini_corpus, cfg, MINI_GEOMETRY
        )
        assert nn.serialize_network(clf.network, {}) == before
        assert rep.meta["classifier_sha256_before"] == rep.meta["classifier_sha256_after"]

    def test_alpha_zero_equals_continued_pretraining(self, mini_corpus):
        clf = self.frozen_classifier(mini_corpus)
        start = nn.serialize_network(make_mini_mapper(16).network, {})

        net_a, _ = nn.deserialize_network(start)
        mapper_a = pipeline.SpectralMapper(net_a)
        cfg_joint = cfg_for(pipeline.STAGE_JOINT, epochs=3, alpha=0.0, seed=21)
        pipeline.train_joint(mapper_a, clf, mini_corpus, cfg_joint, MINI_GEOMETRY)

        net_b, _ = nn.deserialize_network(start)
        mapper_b = pipeline.SpectralMapper(net_b)
        cfg_pre = cfg_for(
            pipeline.STAGE_PRETRAIN, epochs=3, seed=21, batch_mode="utterance"
        )
        pipeline.pretrain_mapper(mini_corpus, cfg_pre, MINI_GEOMETRY, mapper=mapper_b)

        assert nn.serialize_network(mapper_a.network, {}) == nn.serialize_network(
            mapper_b.network, {}
        )

    def test_perfect_mapper_gives_zero_mimic_loss(self, mini_corpus):
        clf = self.frozen_classifier(mini_corpus)
        u = mini_corpus[0]

        class _Oracle(nn.Network):
            def __init__(self, out):
                super().__init__([])
                self._out = out

            def forward(self, x, train=False):
                return self._out

        expander = ContextExpander(u.n_frames, MINI_GEOMETRY)
        x = expand_static(u.noisy_logmag, MINI_GEOMETRY)
        lf, lm, lj = pipeline.joint_losses(
            _Oracle(u.clean_logmag), clf, expander, x, u.clean_logmag,
            tap="pre_softmax", alpha=0.1,
        )
        assert lf == 0.0
        assert lm == 0.0
        assert lj == 0.0

    def test_alpha_defaults_by_tap(self):
        assert cfg_for(pipeline.STAGE_JOINT, tap="pre_softmax").resolved_alpha() == 0.1
        assert cfg_for(pipeline.STAGE_JOINT, tap="post_softmax").resolved_alpha() == 1000.0
        assert cfg_for(pipeline.STAGE_JOINT, alpha=2.5).resolved_alpha() == 2.5

    def test_hard_target_mode_terminates(self, mini_corpus):
        clf = self.frozen_classifier(mini_corpus)
        cfg = cfg_for(pipeline.STAGE_JOINT, epochs=2, target_mode="hard", alpha=0.5)
        try:
            _, rep = pipeline.train_joint(
                make_mini_mapper(17), clf, mini_corpus, cfg, MINI_GEOMETRY
            )
            assert not rep.diverged
        except DivergenceError as err:
            assert err.details["target_mode"] == "hard"

    def test_mimic_only_mode_runs(self, mini_corpus):
        clf = self.frozen_classifier(mini_corpus)
        cfg = cfg_for(pipeline.STAGE_JOINT, epochs=1, fidelity_weight=0.0, alpha=0.1)
        _, rep = pipeline.train_joint(
            make_mini_mapper(18), clf, mini_corpus, cfg, MINI_GEOMETRY
        )
        r = rep.final()
        assert r["train_loss_joint"] == pytest.approx(0.1 * r["train_loss_m"])

    def test_accuracy_metrics_logged(self, mini_corpus):
        clf = self.frozen_classifier(mini_corpus)
        cfg = cfg_for(pipeline.STAGE_JOINT, epochs=1)
        _, rep = pipeline.train_joint(
            make_mini_mapper(19), clf, mini_corpus, cfg, MINI_GEOMETRY
        )
        final = rep.final()
        assert 0.0 <= final["holdout_acc_enhanced"] <= 1.0
        assert 0.0 <= final["holdout_acc_noisy"] <= 1.0


class TestEnhance:
    def test_enhance_static_deterministic(self, mini_corpus):
        mapper = make_mini_mapper(20)
        u = mini_corpus[0]
        a = pipeline.enhance_static(mapper.network, u.noisy_logmag, MINI_GEOMETRY)
        b = pipeline.enhance_static(mapper.network, u.noisy_logmag, MINI_GEOMETRY)
        np.testing.assert_array_equal(a, b)
        assert a.shape == u.clean_logmag.shape

    def test_enhance_op_full_size(self):
        from mimicmap.dsp import KIND_LOGMAG, Utterance
        from mimicmap.models import build_mapper

        mapper = build_mapper(seed=0)
        rng = np.random.default_rng(21)
        utts = [
            Utterance("a", 0.1 * rng.normal(size=8000)),
            Utterance("b", 0.1 * rng.normal(size=6400)),
        ]
        out = pipeline.enhance(mapper, utts)
        assert [f.kind for f in out] == [KIND_LOGMAG, KIND_LOGMAG]
        assert out[0].data.shape == (48, 257)
        assert out[1].data.shape == (38, 257)
        again = pipeline.enhance(mapper, utts)
        np.testing.assert_array_equal(out[0].data, again[0].data)


class TestReportSerialization:
    def test_jsonl_round_trip(self, tmp_path, mini_corpus):
        cfg = cfg_for(pipeline.STAGE_PRETRAIN, epochs=2)
        _, rep = pipeline.pretrain_mapper(
            mini_corpus, cfg, MINI_GEOMETRY, make_mini_mapper(22)
        )
        path = tmp_path / "report.jsonl"
        rep.save_jsonl(path)
        from mimicmap.report import load_records

        assert load_records(path) == rep.records

    def test_checkpoints_written_per_epoch_and_best(self, tmp_path, mini_corpus):
        cfg = cfg_for(pipeline.STAGE_PRETRAIN, epochs=3)
        pipeline.pretrain_mapper(
            mini_corpus, cfg, MINI_GEOMETRY, make_mini_mapper(23),
            checkpoint_dir=tmp_path / "ck",
        )
        names = sorted(p.name for p in (tmp_path / "ck").iterdir())
        assert names == ["best.mmck", "epoch_001.mmck", "epoch_002.mmck", "epoch_003.mmck"]
