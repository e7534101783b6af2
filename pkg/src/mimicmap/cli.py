"""Command-line interface.

One subcommand per pipeline operation:

    gen-data          write a synthetic parallel clean/noisy corpus
    featurize         compute feature archives and frame labels
    train-classifier  stage 1: frame classifier on clean features
    pretrain-mapper   stage 2: mapper on the fidelity loss
    train-joint       stage 3: mapper on fidelity + alpha * mimic loss
    enhance           run a trained mapper over a corpus
    gradcheck         finite-difference gradient verification battery
    report            audit a training report, write CSV and figures

Settings merge as flags > --config JSON file > defaults, and every run
persists its fully resolved configuration next to its outputs. Exit codes:
0 success, 1 usage error (including failed report audits and gradient
checks), 2 divergence.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import data, models, nn, pipeline, verify
from . import report as report_mod
from .dsp import stft_log_magnitude
from .errors import DivergenceError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

_TAP_BY_FLAG = {"pre-softmax": "pre_softmax", "post-softmax": "post_softmax"}

_TRAIN_DEFAULTS = {
    "epochs": 10,
    "batch_size": 256,
    "lr": 1e-4,
    "optimizer": "adam",
    "momentum": 0.9,
    "seed": 0,
    "holdout_fraction": 0.1,
    "patience": 5,
}

_DEFAULTS = {
    "gen-data": {"n_utterances": 120, "seed": 0},
    "featurize": {"n_classes": 50, "seed": 0, "threads": None},
    "train-classifier": dict(_TRAIN_DEFAULTS),
    "pretrain-mapper": dict(_TRAIN_DEFAULTS, batch_mode="frames"),
    "train-joint": dict(
        _TRAIN_DEFAULTS,
        epochs=5,
        alpha=None,
        tap="pre-softmax",
        target_mode="soft",
        fidelity_weight=1.0,
    ),
    "enhance": {"threads": None},
    "gradcheck": {"draws": 20, "seed": 0},
    "report": {},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="mimicmap", description="Speech-enhancement training toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("gen-data", help="generate a synthetic parallel corpus")
    common(sp)
    sp.add_argument("--out", help="corpus output directory")
    sp.add_argument("--n-utterances", type=int, dest="n_utterances")

    sp = sub.add_parser("featurize", help="compute features and frame labels")
    common(sp)
    sp.add_argument("--manifest", help="corpus manifest.json")
    sp.add_argument("--n-classes", type=int, dest="n_classes")
    sp.add_argument("--threads", type=int)

    def train_flags(sp):
        common(sp)
        sp.add_argument("--manifest")
        sp.add_argument("--out")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int, dest="batch_size")
        sp.add_argument("--lr", type=float)
        sp.add_argument("--optimizer", choices=["adam", "sgd"])
        sp.add_argument("--momentum", type=float)
        sp.add_argument("--holdout-fraction", type=float, dest="holdout_fraction")
        sp.add_argument("--patience", type=int)

    sp = sub.add_parser("train-classifier", help="stage 1: clean-frame classifier")
    train_flags(sp)

    sp = sub.add_parser("pretrain-mapper", help="stage 2: fidelity pre-training")
    train_flags(sp)
    sp.add_argument("--batch-mode", choices=["frames", "utterance"], dest="batch_mode")

    sp = sub.add_parser("train-joint", help="stage 3: joint fine-tuning")
    train_flags(sp)
    sp.add_argument("--classifier", help="stage-1 checkpoint")
    sp.add_argument("--mapper", help="stage-2 checkpoint")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--tap", choices=sorted(_TAP_BY_FLAG))
    sp.add_argument("--target-mode", choices=["soft", "hard"], dest="target_mode")
    sp.add_argument("--fidelity-weight", type=float, dest="fidelity_weight")

    sp = sub.add_parser("enhance", help="run a trained mapper over a corpus")
    common(sp)
    sp.add_argument("--manifest")
    sp.add_argument("--mapper")
    sp.add_argument("--out")
    sp.add_argument("--threads", type=int)

    sp = sub.add_parser("gradcheck", help="gradient verification battery")
    common(sp)
    sp.add_argument("--draws", type=int)

    sp = sub.add_parser("report", help="audit a training report")
    common(sp)
    sp.add_argument("--run", help="run directory containing report.jsonl")
    sp.add_argument("--report-file", dest="report_file", help="explicit report.jsonl path")
    sp.add_argument("--out", help="output directory (default: <run>/report)")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config file, and explicitly passed flags."""
    cfg = dict(_DEFAULTS[args.command])
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        file_cfg = json.loads(path.read_text())
        unknown = set(file_cfg) - set(cfg) - {
            "manifest", "out", "classifier", "mapper", "run", "report_file",
        }
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        cfg[key] = value
    cfg["command"] = args.command
    return cfg


def _require(cfg: dict, key: str) -> str:
    value = cfg.get(key)
    if not value:
        raise UsageError(f"--{key.replace('_', '-')} is required for {cfg['command']}")
    return value


def _require_checkpoint(cfg: dict, key: str, producer: str) -> Path:
    path = Path(_require(cfg, key))
    if not path.exists():
        raise UsageError(
            f"{key} checkpoint not found: {path} (run {producer} first)"
        )
    return path


def write_resolved_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"config.{cfg['command']}.json"
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _save_report(rep: pipeline.TrainReport, out_dir: Path) -> None:
    rep.save_jsonl(out_dir / "report.jsonl")
    (out_dir / "report_meta.json").write_text(
        json.dumps(rep.meta, indent=2, sort_keys=True) + "\n"
    )


def _handle_divergence(err: DivergenceError, out_dir: Path) -> int:
    rep = getattr(err, "report", None)
    if rep is not None:
        _save_report(rep, out_dir)
    (out_dir / "divergence.json").write_text(
        json.dumps(err.details, indent=2, sort_keys=True) + "\n"
    )
    log.error("%s (details in %s)", err, out_dir / "divergence.json")
    print(f"diverged: {err.details}", file=sys.stderr)
    return EXIT_DIVERGED


def _load_features(cfg: dict) -> tuple[data.ParallelCorpus, list]:
    manifest = Path(_require(cfg, "manifest"))
    if not manifest.exists():
        raise UsageError(f"manifest not found: {manifest} (run gen-data first)")
    corpus = data.load_manifest(manifest)
    try:
        return corpus, data.load_corpus_features(corpus)
    except ValueError as e:
        raise UsageError(str(e))


def _stage_config(cfg: dict, stage: str, **extra) -> pipeline.StageConfig:
    return pipeline.StageConfig(
        stage=stage,
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        optimizer=cfg["optimizer"],
        lr=cfg["lr"],
        momentum=cfg["momentum"],
        holdout_fraction=cfg["holdout_fraction"],
        patience=cfg["patience"],
        **extra,
    )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_data(cfg: dict) -> int:
    out = Path(_require(cfg, "out"))
    data.generate_synthetic_corpus(cfg["n_utterances"], cfg["seed"], out)
    write_resolved_config(cfg, out)
    print(f"wrote {cfg['n_utterances']} utterances to {out}")
    return EXIT_OK


def cmd_featurize(cfg: dict) -> int:
    manifest = Path(_require(cfg, "manifest"))
    if not manifest.exists():
        raise UsageError(f"manifest not found: {manifest} (run gen-data first)")
    corpus = data.load_manifest(manifest)
    data.featurize_corpus(corpus, cfg["n_classes"], cfg["seed"], cfg["threads"])
    write_resolved_config(cfg, corpus.root)
    print(f"featurized {len(corpus.entries)} utterances ({cfg['n_classes']} classes)")
    return EXIT_OK


def cmd_train_classifier(cfg: dict) -> int:
    corpus, utts = _load_features(cfg)
    n_classes = corpus.meta.get("n_classes")
    if n_classes is None:
        raise UsageError("manifest has no n_classes (run featurize first)")
    out = Path(_require(cfg, "out"))
    write_resolved_config(cfg, out)
    stage_cfg = _stage_config(cfg, pipeline.STAGE_CLASSIFIER, n_classes=n_classes)
    try:
        classifier, rep = pipeline.train_classifier(
            utts, stage_cfg, checkpoint_dir=out / "checkpoints"
        )
    except DivergenceError as e:
        return _handle_divergence(e, out)
    meta = {
        "stage": pipeline.STAGE_CLASSIFIER,
        "seed": cfg["seed"],
        "senone_count": classifier.senone_count,
        "step_count": rep.meta["steps"],
    }
    nn.save_checkpoint(out / "classifier.mmck", classifier.network, meta)
    card = models.model_card(classifier.network, senone_count=classifier.senone_count)
    (out / "classifier.card.json").write_text(json.dumps(card, indent=2, sort_keys=True) + "\n")
    _save_report(rep, out)
    final = rep.final()
    print(
        f"classifier done: holdout accuracy "
        f"{final.get('holdout_accuracy', float('nan')):.3f} -> {out / 'classifier.mmck'}"
    )
    return EXIT_OK


def cmd_pretrain_mapper(cfg: dict) -> int:
    _, utts = _load_features(cfg)
    out = Path(_require(cfg, "out"))
    write_resolved_config(cfg, out)
    stage_cfg = _stage_config(cfg, pipeline.STAGE_PRETRAIN, batch_mode=cfg["batch_mode"])
    try:
        mapper, rep = pipeline.pretrain_mapper(
            utts, stage_cfg, checkpoint_dir=out / "checkpoints"
        )
    except DivergenceError as e:
        return _handle_divergence(e, out)
    meta = {
        "stage": pipeline.STAGE_PRETRAIN,
        "seed": cfg["seed"],
        "step_count": rep.meta["steps"],
    }
    nn.save_checkpoint(out / "mapper.mmck", mapper.network, meta)
    card = models.model_card(mapper.network)
    (out / "mapper.card.json").write_text(json.dumps(card, indent=2, sort_keys=True) + "\n")
    _save_report(rep, out)
    print(
        f"pretrain done: holdout fidelity {rep.final().get('holdout_loss_f', float('nan')):.5f} "
        f"-> {out / 'mapper.mmck'}"
    )
    return EXIT_OK


def cmd_train_joint(cfg: dict) -> int:
    clf_path = _require_checkpoint(cfg, "classifier", "train-classifier")
    map_path = _require_checkpoint(cfg, "mapper", "pretrain-mapper")
    _, utts = _load_features(cfg)
    out = Path(_require(cfg, "out"))
    write_resolved_config(cfg, out)

    clf_net, clf_meta = nn.load_checkpoint(clf_path)
    classifier = models.freeze(
        models.SpectralClassifier(clf_net, clf_meta.get("senone_count", clf_net.layers[-1].n_out))
    )
    map_net, _ = nn.load_checkpoint(map_path)
    mapper = models.SpectralMapper(map_net)

    tap = _TAP_BY_FLAG[cfg["tap"]]
    stage_cfg = _stage_config(
        cfg,
        pipeline.STAGE_JOINT,
        alpha=cfg["alpha"],
        tap=tap,
        target_mode=cfg["target_mode"],
        fidelity_weight=cfg["fidelity_weight"],
    )
    try:
        mapper, rep = pipeline.train_joint(
            mapper, classifier, utts, stage_cfg, checkpoint_dir=out / "checkpoints"
        )
    except DivergenceError as e:
        return _handle_divergence(e, out)
    meta = {
        "stage": pipeline.STAGE_JOINT,
        "seed": cfg["seed"],
        "step_count": rep.meta["steps"],
        "alpha": rep.meta["alpha"],
        "tap": tap,
    }
    nn.save_checkpoint(out / "mapper.mmck", mapper.network, meta)
    card = models.model_card(mapper.network, tap=tap, alpha=rep.meta["alpha"])
    (out / "mapper.card.json").write_text(json.dumps(card, indent=2, sort_keys=True) + "\n")
    _save_report(rep, out)
    final = rep.final()
    print(
        f"joint training done: holdout joint {final.get('holdout_loss_joint', float('nan')):.5f}, "
        f"enhanced accuracy {final.get('holdout_acc_enhanced', float('nan')):.3f} "
        f"-> {out / 'mapper.mmck'}"
    )
    return EXIT_OK


def cmd_enhance(cfg: dict) -> int:
    map_path = _require_checkpoint(cfg, "mapper", "pretrain-mapper or train-joint")
    manifest = Path(_require(cfg, "manifest"))
    if not manifest.exists():
        raise UsageError(f"manifest not found: {manifest}")
    corpus = data.load_manifest(manifest)
    out = Path(_require(cfg, "out"))
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out)
    map_net, _ = nn.load_checkpoint(map_path)

    def load_static(entry):
        return stft_log_magnitude(data.read_wav(corpus.path(entry.noisy_audio))).data

    with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
        statics = list(pool.map(load_static, corpus.entries))
    for entry, static in zip(corpus.entries, statics):
        enhanced = pipeline.enhance_static(map_net, static)
        data.write_feature_archive(out / f"{entry.utt_id}.mmfa", enhanced)
    print(f"enhanced {len(corpus.entries)} utterances -> {out}")
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    results = verify.run_gradient_battery(cfg["draws"], cfg["seed"])
    failed = [r for r in results if not r.ok]
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"[{status}] {r.name:<28s} max rel err {r.max_rel_err:.3e}")
    return EXIT_OK if not failed else EXIT_USAGE


def cmd_report(cfg: dict) -> int:
    if cfg.get("report_file"):
        jsonl = Path(cfg["report_file"])
        default_out = jsonl.parent / "report"
    else:
        run_dir = Path(_require(cfg, "run"))
        jsonl = run_dir / "report.jsonl"
        default_out = run_dir / "report"
    if not jsonl.exists():
        raise UsageError(f"no report found at {jsonl}")
    out = Path(cfg.get("out") or default_out)
    violations, files = report_mod.run_report(jsonl, out)
    write_resolved_config(cfg, out)
    for f in files:
        print(f"wrote {f}")
    if violations:
        print(f"FAIL: {len(violations)} joint-loss identity violations", file=sys.stderr)
        return EXIT_USAGE
    print("joint-loss identity holds for all records")
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "featurize": cmd_featurize,
    "train-classifier": cmd_train_classifier,
    "pretrain-mapper": cmd_pretrain_mapper,
    "train-joint": cmd_train_joint,
    "enhance": cmd_enhance,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None) -> int:
    level = _LOG_LEVELS.get(os.environ.get("MIMICMAP_LOG", "info"), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
