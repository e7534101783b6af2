"""End-to-end CLI tests on a small real corpus (production-size networks)."""

import json
import os
from pathlib import Path

import pytest

from mimicmap import cli, data


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Run the full subcommand chain once in a scratch working directory."""
    root = tmp_path_factory.mktemp("cli")
    prev = os.getcwd()
    os.chdir(root)
    try:
        steps = [
            ["gen-data", "--out", "corpus", "--n-utterances", "12", "--seed", "3"],
            ["featurize", "--manifest", "corpus/manifest.json", "--n-classes", "6",
             "--seed", "3"],
            ["train-classifier", "--manifest", "corpus/manifest.json", "--out", "stage1",
             "--epochs", "1", "--seed", "3"],
            ["pretrain-mapper", "--manifest", "corpus/manifest.json", "--out", "stage2",
             "--epochs", "1", "--seed", "3"],
            ["train-joint", "--manifest", "corpus/manifest.json", "--out", "stage3",
             "--classifier", "stage1/classifier.mmck", "--mapper", "stage2/mapper.mmck",
             "--tap", "pre-softmax", "--epochs", "1", "--seed", "3"],
            ["enhance", "--manifest", "corpus/manifest.json",
             "--mapper", "stage3/mapper.mmck", "--out", "enhanced"],
            ["report", "--run", "stage3"],
        ]
        for argv in steps:
            assert cli.main(argv) == 0, f"step failed: {argv}"
        yield root
    finally:
        os.chdir(prev)


class TestChain:
    def test_artifacts_exist(self, workspace):
        for rel in (
            "corpus/manifest.json",
            "corpus/feats/utt0000.clean.mmfa",
            "corpus/labels/utt0000.mmlb",
            "stage1/classifier.mmck",
            "stage1/classifier.card.json",
            "stage1/report.jsonl",
            "stage2/mapper.mmck",
            "stage2/checkpoints/best.mmck",
            "stage3/mapper.mmck",
            "stage3/report_meta.json",
            "stage3/report/report.csv",
            "stage3/report/loss_curves.png",
            "enhanced/utt0000.mmfa",
        ):
            assert (workspace / rel).exists(), rel

    def test_resolved_configs_written(self, workspace):
        cfg = json.loads((workspace / "stage3/config.train-joint.json").read_text())
        assert cfg["command"] == "train-joint"
        assert cfg["tap"] == "pre-softmax"
        assert cfg["seed"] == 3

    def test_alpha_defaults_to_tap_value(self, workspace):
        meta = json.loads((workspace / "stage3/report_meta.json").read_text())
        assert meta["alpha"] == 0.1
        rc = cli.main([
            "train-joint", "--manifest", "corpus/manifest.json", "--out", "stage3post",
            "--classifier", "stage1/classifier.mmck", "--mapper", "stage2/mapper.mmck",
            "--tap", "post-softmax", "--epochs", "0", "--seed", "3",
        ])
        assert rc == 0
        meta = json.loads((workspace / "stage3post/report_meta.json").read_text())
        assert meta["alpha"] == 1000.0

    def test_classifier_untouched_by_joint_run(self, workspace):
        meta = json.loads((workspace / "stage3/report_meta.json").read_text())
        assert meta["classifier_sha256_before"] == meta["classifier_sha256_after"]

    def test_enhanced_archives_have_static_dims(self, workspace):
        corpus = data.load_manifest(workspace / "corpus/manifest.json")
        for entry in corpus.entries:
            enhanced = data.read_feature_archive(workspace / "enhanced" / f"{entry.utt_id}.mmfa")
            noisy = data.read_feature_archive(corpus.path(entry.noisy_features))
            assert enhanced.shape == (noisy.shape[0], 257)

    def test_report_identity_audit_passes(self, workspace):
        assert cli.main(["report", "--run", "stage2", "--out", "stage2/report"]) == 0
        assert (workspace / "stage2/report/snr_breakdown.png").exists()


class TestUsageErrors:
    def test_missing_checkpoint_names_prerequisite_stage(self, workspace, capsys):
        rc = cli.main([
            "train-joint", "--manifest", "corpus/manifest.json", "--out", "x",
            "--classifier", "nope.mmck", "--mapper", "stage2/mapper.mmck",
        ])
        assert rc == cli.EXIT_USAGE
        err = capsys.readouterr().err
        assert "train-classifier" in err and "nope.mmck" in err

    def test_missing_manifest(self, workspace, capsys):
        rc = cli.main(["featurize", "--manifest", "absent/manifest.json"])
        assert rc == cli.EXIT_USAGE
        assert "gen-data" in capsys.readouterr().err

    def test_unknown_flag(self, workspace):
        assert cli.main(["gen-data", "--out", "c2", "--bogus"]) == cli.EXIT_USAGE

    def test_features_required_before_training(self, workspace, capsys):
        assert cli.main(["gen-data", "--out", "rawonly", "--n-utterances", "2"]) == 0
        rc = cli.main([
            "train-classifier", "--manifest", "rawonly/manifest.json", "--out", "x",
        ])
        assert rc == cli.EXIT_USAGE
        assert "featurize" in capsys.readouterr().err


class TestConfigFile:
    def test_config_file_supplies_values_and_flags_override(self, workspace):
        Path("gen.json").write_text(json.dumps({"n_utterances": 4, "out": "cfg_corpus"}))
        assert cli.main(["gen-data", "--config", "gen.json", "--seed", "1"]) == 0
        corpus = data.load_manifest(workspace / "cfg_corpus/manifest.json")
        assert len(corpus.entries) == 4
        assert cli.main([
            "gen-data", "--config", "gen.json", "--out", "cfg_corpus2",
            "--n-utterances", "3", "--seed", "1",
        ]) == 0
        corpus2 = data.load_manifest(workspace / "cfg_corpus2/manifest.json")
        assert len(corpus2.entries) == 3

    def test_unknown_config_key_rejected(self, workspace, capsys):
        Path("bad.json").write_text(json.dumps({"n_utterance": 4}))
        assert cli.main(["gen-data", "--config", "bad.json", "--out", "z"]) == cli.EXIT_USAGE
        assert "n_utterance" in capsys.readouterr().err


class TestHardTargets:
    def test_hard_mode_terminates_cleanly(self, workspace):
        rc = cli.main([
            "train-joint", "--manifest", "corpus/manifest.json", "--out", "hard",
            "--classifier", "stage1/classifier.mmck", "--mapper", "stage2/mapper.mmck",
            "--target-mode", "hard", "--epochs", "1", "--seed", "3",
        ])
        assert rc in (cli.EXIT_OK, cli.EXIT_DIVERGED)
        if rc == cli.EXIT_DIVERGED:
            assert (workspace / "hard/divergence.json").exists()
        else:
            assert (workspace / "hard/report.jsonl").exists()


class TestGradcheckCommand:
    def test_gradcheck_passes(self, capsys):
        assert cli.main(["gradcheck", "--draws", "1", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out and "[FAIL]" not in out


class TestDeterminism:
    def test_gen_and_featurize_reruns_byte_identical(self, workspace):
        # identical argv in two working directories: every byte must match
        argvs = [
            ["gen-data", "--out", "corpus", "--n-utterances", "4", "--seed", "9"],
            ["featurize", "--manifest", "corpus/manifest.json", "--n-classes", "4",
             "--seed", "9"],
        ]
        for sub in ("det_a", "det_b"):
            (workspace / sub).mkdir()
            os.chdir(workspace / sub)
            for argv in argvs:
                assert cli.main(argv) == 0
        os.chdir(workspace)
        a, b = workspace / "det_a", workspace / "det_b"
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert files_a == files_b and len(files_a) > 10
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
