"""Three-stage training orchestration and batch enhancement.

Stage 1 trains the frame classifier on clean features with cross entropy.
Stage 2 pre-trains the mapper on parallel noisy/clean frames with the
spectral regression (fidelity) loss. Stage 3 fine-tunes the mapper with a
joint objective: fidelity plus `alpha` times the behavior-matching (mimic)
loss, the squared distance between the frozen classifier's view of clean
frames and its view of the mapper's output routed through the delta/splice
operator. Only the mapper receives updates in stage 3; the classifier is
byte-verified unchanged.

Stage 3 steps on whole utterances because the routing needs contiguous
frames (delta window 2 plus double deltas plus context 5 pulls context
from up to 9 frames away). Stage 2 can batch shuffled frames (default) or
reuse the per-utterance loop, which makes an alpha=0 stage-3 run the exact
continuation of a stage-2 run.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import UtteranceFeatures, batcher, split_holdout
from .dsp import (
    DEFAULT_GEOMETRY,
    ContextExpander,
    FeatureGeometry,
    FeatureSequence,
    KIND_LOGMAG,
    Utterance,
    delta_features,
    expand_static,
    stft_log_magnitude,
)
from .errors import DivergenceError
from .models import (
    SpectralClassifier,
    SpectralMapper,
    TAP_POST_SOFTMAX,
    TAP_PRE_SOFTMAX,
    build_classifier,
    build_mapper,
    classifier_tap,
    classifier_tap_backward,
)

log = logging.getLogger(__name__)

STAGE_CLASSIFIER = "train_classifier"
STAGE_PRETRAIN = "pretrain_mapper"
STAGE_JOINT = "train_joint"

TARGET_SOFT = "soft"
TARGET_HARD = "hard"

ALPHA_DEFAULTS = {"pre_softmax": 0.1, "post_softmax": 1000.0}

_EVAL_CHUNK = 512


@dataclass
class StageConfig:
    stage: str = ""
    epochs: int = 10
    batch_size: int = 256
    seed: int = 0
    optimizer: str = "adam"
    lr: float = 1e-4
    momentum: float = 0.9
    alpha: float | None = None
    tap: str = TAP_PRE_SOFTMAX
    fidelity_weight: float = 1.0
    target_mode: str = TARGET_SOFT
    batch_mode: str = "frames"
    n_classes: int = 50
    holdout_fraction: float = 0.1
    patience: int = 5

    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        if self.tap not in ALPHA_DEFAULTS:
            raise ValueError(f"unknown tap {self.tap!r}")
        return ALPHA_DEFAULTS[self.tap]


@dataclass
class TrainReport:
    """Per-epoch loss/metric records plus run-level metadata.

    Record 0 is an evaluation of the untrained (or incoming) model;
    records 1..n cover the training epochs. Serialized as line-delimited
    JSON, one record per line.
    """

    stage: str
    meta: dict = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)
    diverged: bool = False
    divergence: dict | None = None

    def save_jsonl(self, path) -> None:
        lines = [json.dumps(r, sort_keys=True, allow_nan=False) for r in self.records]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

    def final(self) -> dict:
        return self.records[-1]


class SplicedFrameStore:
    """Random frame-level access to spliced features.

    Keeps the delta-augmented tracks of every utterance (edge-padded,
    concatenated) and materializes full context windows only per batch,
    which keeps memory at one third of the spliced footprint.
    """

    def __init__(self, static_list: list[np.ndarray], geometry: FeatureGeometry):
        self.geometry = geometry
        c = geometry.context
        if not static_list:
            self._rows = np.zeros((0, geometry.dim_deltas))
            self._frame_rows = np.zeros(0, dtype=int)
            self._window = np.arange(-c, c + 1)
            return
        blocks = []
        frame_rows = []
        offset = 0
        for x in static_list:
            d = delta_features(x, geometry.delta_window)
            dd = delta_features(d, geometry.delta_window)
            tracks = np.pad(np.hstack([x, d, dd]), ((c, c), (0, 0)), mode="edge")
            blocks.append(tracks)
            frame_rows.append(offset + c + np.arange(x.shape[0]))
            offset += tracks.shape[0]
        self._rows = np.vstack(blocks)
        self._frame_rows = np.concatenate(frame_rows)
        self._window = np.arange(-c, c + 1)

    def __len__(self) -> int:
        return len(self._frame_rows)

    def gather(self, indices: np.ndarray) -> np.ndarray:
        rows = self._frame_rows[indices][:, None] + self._window[None, :]
        return self._rows[rows].reshape(len(indices), -1)


def _split(utts: list[UtteranceFeatures], cfg: StageConfig):
    train_idx, hold_idx = split_holdout(
        utts, [u.snr_db for u in utts], cfg.holdout_fraction, cfg.seed
    )
    return [utts[i] for i in train_idx], [utts[i] for i in hold_idx]


def _check_labels(utts: list[UtteranceFeatures]) -> None:
    for u in utts:
        if u.labels is None:
            raise ValueError(f"{u.utt_id}: no labels")
        if len(u.labels) != u.n_frames:
            raise ValueError(
                f"{u.utt_id}: {len(u.labels)} labels for {u.n_frames} frames"
            )


def _expander_for(expanders: dict, n_frames: int, geometry: FeatureGeometry) -> ContextExpander:
    exp = expanders.get(n_frames)
    if exp is None:
        exp = expanders[n_frames] = ContextExpander(n_frames, geometry)
    return exp


def _save_epoch_checkpoint(checkpoint_dir, network, stage, cfg, epoch, steps, best):
    if checkpoint_dir is None:
        return
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    meta = {"stage": stage, "seed": cfg.seed, "epoch": epoch, "step_count": steps}
    nn.save_checkpoint(checkpoint_dir / f"epoch_{epoch:03d}.mmck", network, meta)
    if best:
        nn.save_checkpoint(checkpoint_dir / "best.mmck", network, meta)


def _divergence(stage: str, message: str, report: TrainReport, **details) -> DivergenceError:
    info = {"stage": stage, **details}
    err = DivergenceError(f"diverged: {message}", info)
    report.diverged = True
    report.divergence = info
    err.report = report
    return err


# ---------------------------------------------------------------------------
# Stage 1: classifier on clean features


def train_classifier(
    utts: list[UtteranceFeatures],
    cfg: StageConfig,
    geometry: FeatureGeometry = DEFAULT_GEOMETRY,
    classifier: SpectralClassifier | None = None,
    checkpoint_dir=None,
) -> tuple[SpectralClassifier, TrainReport]:
    _check_labels(utts)
    if classifier is None:
        classifier = build_classifier(cfg.n_classes, cfg.seed)
    net = classifier.network
    train_utts, hold_utts = _split(utts, cfg)
    store = SplicedFrameStore([u.clean_logmag for u in train_utts], geometry)
    labels = np.concatenate([u.labels for u in train_utts])
    hold_store = SplicedFrameStore([u.clean_logmag for u in hold_utts], geometry)
    hold_labels = np.concatenate([u.labels for u in hold_utts]) if hold_utts else np.empty(0, int)

    report = TrainReport(
        STAGE_CLASSIFIER,
        meta={
            "stage": STAGE_CLASSIFIER,
            "seed": cfg.seed,
            "n_classes": classifier.senone_count,
            "train_utterances": len(train_utts),
            "holdout_utterances": len(hold_utts),
        },
    )
    opt = nn.make_optimizer(net.params(), cfg.optimizer, cfg.lr, cfg.momentum)
    steps = 0

    def evaluate() -> dict:
        if not len(hold_store):
            return {}
        loss_sum = 0.0
        correct = 0
        for lo in range(0, len(hold_store), _EVAL_CHUNK):
            idx = np.arange(lo, min(lo + _EVAL_CHUNK, len(hold_store)))
            logits = net.forward(hold_store.gather(idx), train=False)
            lv, _ = nn.cross_entropy_loss(logits, hold_labels[idx])
            loss_sum += lv.per_example.sum()
            correct += int((np.argmax(logits, axis=1) == hold_labels[idx]).sum())
        return {
            "holdout_loss_c": float(loss_sum / len(hold_store)),
            "holdout_accuracy": correct / len(hold_store),
        }

    report.records.append({"epoch": 0, **evaluate()})
    best_metric = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        loss_sum = 0.0
        for idx in batcher(len(store), cfg.batch_size, cfg.seed, epoch):
            x = store.gather(idx)
            net.zero_grad()
            logits = net.forward(x, train=True)
            lv, grad = nn.cross_entropy_loss(logits, labels[idx])
            if not np.isfinite(lv.value):
                raise _divergence(
                    STAGE_CLASSIFIER, "non-finite classification loss", report,
                    epoch=epoch, step=steps, loss_c=repr(lv.value),
                )
            net.backward(grad)
            try:
                opt.step(net.grads())
            except DivergenceError:
                raise _divergence(
                    STAGE_CLASSIFIER, "non-finite gradient", report,
                    epoch=epoch, step=steps, loss_c=lv.value,
                )
            loss_sum += lv.per_example.sum()
            steps += 1
        record = {"epoch": epoch, "train_loss_c": float(loss_sum / len(store)), **evaluate()}
        report.records.append(record)
        log.info("classifier epoch %d: %s", epoch, record)
        metric = record.get("holdout_loss_c", record["train_loss_c"])
        improved = metric < best_metric
        best_metric = min(best_metric, metric)
        _save_epoch_checkpoint(checkpoint_dir, net, STAGE_CLASSIFIER, cfg, epoch, steps, improved)
        stale = 0 if improved else stale + 1
        if cfg.patience and stale >= cfg.patience:
            log.info("classifier early stop at epoch %d", epoch)
            break
    report.meta["steps"] = steps
    return classifier, report


# ---------------------------------------------------------------------------
# Joint-objective plumbing shared by stages 2 and 3


def joint_losses(
    mapper_net: nn.Network,
    classifier: SpectralClassifier | None,
    expander: ContextExpander,
    noisy_spliced: np.ndarray,
    clean_logmag: np.ndarray,
    tap: str = TAP_PRE_SOFTMAX,
    alpha: float = 0.0,
    fidelity_weight: float = 1.0,
    labels: np.ndarray | None = None,
    hard: bool = False,
    train: bool = False,
) -> tuple[float, float, float]:
    """Forward-only joint objective; returns (fidelity, mimic, joint)."""
    pred = mapper_net.forward(noisy_spliced, train=train)
    lf, _ = nn.mse_loss(pred, clean_logmag)
    lm = 0.0
    if alpha != 0.0 and classifier is not None:
        enhanced = expander.forward(pred)
        if hard:
            logits = classifier.network.forward(enhanced, train=False)
            lv, _ = nn.cross_entropy_loss(logits, labels)
        else:
            target = classifier_tap(classifier, expander.forward(clean_logmag), tap)
            lv, _ = nn.mse_loss(classifier_tap(classifier, enhanced, tap), target)
        lm = lv.value
    return lf.value, lm, fidelity_weight * lf.value + alpha * lm


def joint_step(
    mapper_net: nn.Network,
    classifier: SpectralClassifier | None,
    expander: ContextExpander,
    noisy_spliced: np.ndarray,
    clean_logmag: np.ndarray,
    tap: str = TAP_PRE_SOFTMAX,
    alpha: float = 0.0,
    fidelity_weight: float = 1.0,
    labels: np.ndarray | None = None,
    hard: bool = False,
    train: bool = True,
) -> tuple[float, float]:
    """One utterance step: accumulate mapper gradients, return (L_F, L_M).

    The clean-side tap target is computed first, with no gradient; the
    enhanced side then routes the mapper output through the expander into
    the frozen classifier, and alpha scales the mimic gradient before it
    joins the fidelity gradient at the mapper output. With alpha == 0 the
    classifier branch is skipped entirely, so the executed arithmetic is
    exactly a fidelity-only step.
    """
    mapper_net.zero_grad()
    pred = mapper_net.forward(noisy_spliced, train=train)
    lf, grad_f = nn.mse_loss(pred, clean_logmag)
    grad_pred = fidelity_weight * grad_f if fidelity_weight != 1.0 else grad_f
    lm = 0.0
    if alpha != 0.0 and classifier is not None:
        if not classifier.frozen:
            raise ValueError("classifier must be frozen during joint training")
        if hard:
            enhanced = expander.forward(pred)
            logits = classifier.network.forward(enhanced, train=False)
            lv, grad_logits = nn.cross_entropy_loss(logits, labels)
            grad_enhanced = classifier.network.backward(alpha * grad_logits)
        else:
            target = classifier_tap(classifier, expander.forward(clean_logmag), tap)
            enhanced = expander.forward(pred)
            out = classifier_tap(classifier, enhanced, tap)
            lv, grad_out = nn.mse_loss(out, target)
            grad_enhanced = classifier_tap_backward(classifier, tap, out, alpha * grad_out)
        lm = lv.value
        grad_pred = grad_pred + expander.backward(grad_enhanced)
    mapper_net.backward(grad_pred)
    return lf.value, lm


def _mapper_eval(
    mapper_net: nn.Network,
    classifier: SpectralClassifier | None,
    utts: list[UtteranceFeatures],
    geometry: FeatureGeometry,
    tap: str,
    alpha: float,
    fidelity_weight: float,
    expanders: dict,
    by_snr: bool = False,
    noisy_accuracy: dict | None = None,
) -> dict:
    """Holdout metrics for mapper stages (inference mode, frame-weighted)."""
    if not utts:
        return {}
    f_sum = m_sum = 0.0
    n_frames = 0
    # per-stratum accumulators: key -> [loss_sum, frame_count]
    enh_by_snr: dict[str, list[float]] = {}
    noisy_by_snr: dict[str, list[float]] = {}
    correct_enh = correct_noisy = labeled = 0
    for u in utts:
        x = expand_static(u.noisy_logmag, geometry)
        pred = mapper_net.forward(x, train=False)
        lf, _ = nn.mse_loss(pred, u.clean_logmag)
        f_sum += lf.per_example.sum()
        n_frames += u.n_frames
        if by_snr:
            key = f"{u.snr_db:g}"
            ln, _ = nn.mse_loss(u.noisy_logmag, u.clean_logmag)
            for acc, loss in ((enh_by_snr, lf), (noisy_by_snr, ln)):
                bucket = acc.setdefault(key, [0.0, 0])
                bucket[0] += loss.per_example.sum()
                bucket[1] += u.n_frames
        if classifier is not None:
            expander = _expander_for(expanders, u.n_frames, geometry)
            target = classifier_tap(classifier, expander.forward(u.clean_logmag), tap)
            # one classifier pass serves both the tap loss and the accuracy
            logits = classifier.network.forward(expander.forward(pred), train=False)
            out = nn.softmax(logits) if tap == TAP_POST_SOFTMAX else logits
            lm, _ = nn.mse_loss(out, target)
            m_sum += lm.per_example.sum()
            if u.labels is not None:
                correct_enh += int((np.argmax(logits, axis=1) == u.labels).sum())
                if noisy_accuracy is not None:
                    if u.utt_id not in noisy_accuracy:
                        noisy_logits = classifier.network.forward(x, train=False)
                        noisy_accuracy[u.utt_id] = int(
                            (np.argmax(noisy_logits, axis=1) == u.labels).sum()
                        )
                    correct_noisy += noisy_accuracy[u.utt_id]
                labeled += u.n_frames
    out = {"holdout_loss_f": float(f_sum / n_frames)}
    if classifier is not None:
        out["holdout_loss_m"] = float(m_sum / n_frames)
        out["holdout_loss_joint"] = (
            fidelity_weight * out["holdout_loss_f"] + alpha * out["holdout_loss_m"]
        )
        if labeled:
            out["holdout_acc_enhanced"] = correct_enh / labeled
            if noisy_accuracy is not None:
                out["holdout_acc_noisy"] = correct_noisy / labeled
    if by_snr:
        out["holdout_mse_enhanced_by_snr"] = {
            k: float(v[0] / v[1]) for k, v in sorted(enh_by_snr.items())
        }
        out["holdout_mse_noisy_by_snr"] = {
            k: float(v[0] / v[1]) for k, v in sorted(noisy_by_snr.items())
        }
    return out


def _utterance_epoch(
    mapper_net, classifier, train_utts, cfg, geometry, alpha, opt, epoch, expanders,
    hard, stage, report, steps,
):
    """One pass over shuffled whole utterances; returns (sums, steps)."""
    perm = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_utts))
    f_sum = m_sum = j_sum = 0.0
    for ui in perm:
        u = train_utts[ui]
        x = expand_static(u.noisy_logmag, geometry)
        expander = _expander_for(expanders, u.n_frames, geometry)
        lf, lm = joint_step(
            mapper_net, classifier, expander, x, u.clean_logmag,
            tap=cfg.tap, alpha=alpha, fidelity_weight=cfg.fidelity_weight,
            labels=u.labels, hard=hard, train=True,
        )
        lj = cfg.fidelity_weight * lf + alpha * lm
        if not np.isfinite(lj):
            raise _divergence(
                stage, "non-finite joint loss", report,
                epoch=epoch, step=steps, utt_id=u.utt_id, alpha=alpha, tap=cfg.tap,
                target_mode=cfg.target_mode if stage == STAGE_JOINT else TARGET_SOFT,
                loss_f=_jsonable(lf), loss_m=_jsonable(lm), loss_joint=_jsonable(lj),
            )
        try:
            opt.step(mapper_net.grads())
        except DivergenceError:
            raise _divergence(
                stage, "non-finite gradient", report,
                epoch=epoch, step=steps, utt_id=u.utt_id, alpha=alpha, tap=cfg.tap,
                loss_f=_jsonable(lf), loss_m=_jsonable(lm), loss_joint=_jsonable(lj),
            )
        f_sum += lf
        m_sum += lm
        j_sum += lj
        steps += 1
    n = len(train_utts)
    return {"f": float(f_sum / n), "m": float(m_sum / n), "j": float(j_sum / n)}, steps


def _jsonable(x: float):
    return float(x) if np.isfinite(x) else repr(float(x))


# ---------------------------------------------------------------------------
# Stage 2: mapper pre-training on the fidelity loss


def pretrain_mapper(
    utts: list[UtteranceFeatures],
    cfg: StageConfig,
    geometry: FeatureGeometry = DEFAULT_GEOMETRY,
    mapper: SpectralMapper | None = None,
    checkpoint_dir=None,
) -> tuple[SpectralMapper, TrainReport]:
    if mapper is None:
        mapper = build_mapper(cfg.seed)
    net = mapper.network
    net.reseed_dropout(cfg.seed)
    # utterance steps normalize by pinned statistics, frame batches by
    # batch statistics (see Network.set_frozen_batchnorm_stats)
    net.set_frozen_batchnorm_stats(cfg.batch_mode == "utterance")
    train_utts, hold_utts = _split(utts, cfg)
    report = TrainReport(
        STAGE_PRETRAIN,
        meta={
            "stage": STAGE_PRETRAIN,
            "seed": cfg.seed,
            "batch_mode": cfg.batch_mode,
            "train_utterances": len(train_utts),
            "holdout_utterances": len(hold_utts),
        },
    )
    opt = nn.make_optimizer(net.params(), cfg.optimizer, cfg.lr, cfg.momentum)
    expanders: dict[int, ContextExpander] = {}
    steps = 0

    store = targets = None
    if cfg.batch_mode == "frames":
        store = SplicedFrameStore([u.noisy_logmag for u in train_utts], geometry)
        targets = np.vstack([u.clean_logmag for u in train_utts])
    elif cfg.batch_mode != "utterance":
        raise ValueError(f"unknown batch_mode {cfg.batch_mode!r}")

    def evaluate() -> dict:
        return _mapper_eval(
            net, None, hold_utts, geometry, cfg.tap, 0.0, cfg.fidelity_weight,
            expanders, by_snr=True,
        )

    report.records.append({"epoch": 0, **evaluate()})
    best_metric = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        if cfg.batch_mode == "frames":
            f_sum = 0.0
            for idx in batcher(len(store), cfg.batch_size, cfg.seed, epoch):
                x = store.gather(idx)
                net.zero_grad()
                pred = net.forward(x, train=True)
                lv, grad = nn.mse_loss(pred, targets[idx])
                if not np.isfinite(lv.value):
                    raise _divergence(
                        STAGE_PRETRAIN, "non-finite fidelity loss", report,
                        epoch=epoch, step=steps, loss_f=_jsonable(lv.value),
                    )
                net.backward(grad)
                try:
                    opt.step(net.grads())
                except DivergenceError:
                    raise _divergence(
                        STAGE_PRETRAIN, "non-finite gradient", report,
                        epoch=epoch, step=steps, loss_f=lv.value,
                    )
                f_sum += lv.per_example.sum()
                steps += 1
            train_f = float(f_sum / len(store))
        else:
            sums, steps = _utterance_epoch(
                net, None, train_utts, cfg, geometry, 0.0, opt, epoch, expanders,
                hard=False, stage=STAGE_PRETRAIN, report=report, steps=steps,
            )
            train_f = sums["f"]
        record = {"epoch": epoch, "train_loss_f": train_f, **evaluate()}
        report.records.append(record)
        log.info("pretrain epoch %d: loss_f=%.5f holdout=%.5f",
                 epoch, train_f, record.get("holdout_loss_f", float("nan")))
        metric = record.get("holdout_loss_f", train_f)
        improved = metric < best_metric
        best_metric = min(best_metric, metric)
        _save_epoch_checkpoint(checkpoint_dir, net, STAGE_PRETRAIN, cfg, epoch, steps, improved)
        stale = 0 if improved else stale + 1
        if cfg.patience and stale >= cfg.patience:
            log.info("pretrain early stop at epoch %d", epoch)
            break
    report.meta["steps"] = steps
    return mapper, report


# ---------------------------------------------------------------------------
# Stage 3: joint fine-tuning against the frozen classifier


def train_joint(
    mapper: SpectralMapper,
    classifier: SpectralClassifier,
    utts: list[UtteranceFeatures],
    cfg: StageConfig,
    geometry: FeatureGeometry = DEFAULT_GEOMETRY,
    checkpoint_dir=None,
) -> tuple[SpectralMapper, TrainReport]:
    if not classifier.frozen:
        raise ValueError("classifier must be frozen before joint training")
    hard = cfg.target_mode == TARGET_HARD
    if cfg.target_mode not in (TARGET_SOFT, TARGET_HARD):
        raise ValueError(f"unknown target_mode {cfg.target_mode!r}")
    if hard:
        _check_labels(utts)
    alpha = cfg.resolved_alpha()
    net = mapper.network
    net.reseed_dropout(cfg.seed)
    net.set_frozen_batchnorm_stats(True)  # single-utterance steps
    bytes_before = nn.serialize_network(classifier.network, {})
    sha_before = hashlib.sha256(bytes_before).hexdigest()

    train_utts, hold_utts = _split(utts, cfg)
    report = TrainReport(
        STAGE_JOINT,
        meta={
            "stage": STAGE_JOINT,
            "seed": cfg.seed,
            "alpha": alpha,
            "tap": cfg.tap,
            "fidelity_weight": cfg.fidelity_weight,
            "target_mode": cfg.target_mode,
            "train_utterances": len(train_utts),
            "holdout_utterances": len(hold_utts),
            "classifier_sha256_before": sha_before,
        },
    )
    opt = nn.make_optimizer(net.params(), cfg.optimizer, cfg.lr, cfg.momentum)
    expanders: dict[int, ContextExpander] = {}
    noisy_acc_cache: dict[str, int] = {}
    steps = 0

    def evaluate() -> dict:
        return _mapper_eval(
            net, classifier, hold_utts, geometry, cfg.tap, alpha, cfg.fidelity_weight,
            expanders, by_snr=False, noisy_accuracy=noisy_acc_cache,
        )

    def record_fields(extra: dict) -> dict:
        return {"alpha": alpha, "fidelity_weight": cfg.fidelity_weight, **extra}

    report.records.append(record_fields({"epoch": 0, **evaluate()}))
    best_metric = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        sums, steps = _utterance_epoch(
            net, classifier, train_utts, cfg, geometry, alpha, opt, epoch, expanders,
            hard=hard, stage=STAGE_JOINT, report=report, steps=steps,
        )
        record = record_fields({
            "epoch": epoch,
            "train_loss_f": sums["f"],
            "train_loss_m": sums["m"],
            "train_loss_joint": sums["j"],
            **evaluate(),
        })
        report.records.append(record)
        log.info("joint epoch %d: f=%.5f m=%.5g joint=%.5f",
                 epoch, sums["f"], sums["m"], sums["j"])
        metric = record.get("holdout_loss_joint", sums["j"])
        improved = metric < best_metric
        best_metric = min(best_metric, metric)
        _save_epoch_checkpoint(checkpoint_dir, net, STAGE_JOINT, cfg, epoch, steps, improved)
        stale = 0 if improved else stale + 1
        if cfg.patience and stale >= cfg.patience:
            log.info("joint early stop at epoch %d", epoch)
            break

    bytes_after = nn.serialize_network(classifier.network, {})
    report.meta["classifier_sha256_after"] = hashlib.sha256(bytes_after).hexdigest()
    report.meta["steps"] = steps
    if bytes_after != bytes_before:
        raise RuntimeError("frozen classifier changed during joint training")
    return mapper, report


# ---------------------------------------------------------------------------
# Inference


def enhance_static(
    mapper_net: nn.Network, logmag: np.ndarray, geometry: FeatureGeometry = DEFAULT_GEOMETRY
) -> np.ndarray:
    """Denoise one utterance's static log-magnitude frames."""
    return mapper_net.forward(expand_static(logmag, geometry), train=False)


def enhance(mapper: SpectralMapper, utterances: list[Utterance]) -> list[FeatureSequence]:
    """Map noisy utterances to enhanced log-magnitude feature sequences."""
    out = []
    for u in utterances:
        logmag = stft_log_magnitude(u.samples)
        out.append(FeatureSequence(enhance_static(mapper.network, logmag.data), KIND_LOGMAG))
    return out
