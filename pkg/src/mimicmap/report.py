"""Training-report post-processing.

Reads the line-delimited JSON written by the training stages, audits the
joint-loss identity (loss_joint must equal fidelity_weight * loss_f +
alpha * loss_m at every logged record), and renders a CSV table plus
loss-curve figures next to it. All outputs are deterministic: stable key
order, no timestamps, fixed figure geometry.
"""

import csv
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

log = logging.getLogger(__name__)

IDENTITY_TOL = 1e-9

_PNG_META = {"Software": "mimicmap"}
_FIGSIZE = (7.0, 4.2)


def load_records(jsonl_path) -> list[dict]:
    records = []
    for line in Path(jsonl_path).read_text().splitlines():
        line = line.strip()
        if line:
            records.append(json.loads(line))
    return records


def check_joint_identity(records: list[dict], tol: float = IDENTITY_TOL) -> list[dict]:
    """Return one violation dict per record breaking the joint-loss identity."""
    violations = []
    for record in records:
        for prefix in ("train", "holdout"):
            keys = [f"{prefix}_loss_{part}" for part in ("f", "m", "joint")]
            if not all(k in record for k in keys):
                continue
            alpha = record.get("alpha")
            if alpha is None:
                continue
            weight = record.get("fidelity_weight", 1.0)
            expected = weight * record[keys[0]] + alpha * record[keys[1]]
            gap = abs(record[keys[2]] - expected)
            if not (gap <= tol):
                violations.append({
                    "epoch": record.get("epoch"),
                    "split": prefix,
                    "logged": record[keys[2]],
                    "recomputed": expected,
                    "gap": gap,
                })
    return violations


def _flatten(record: dict) -> dict:
    flat = {}
    for key, value in record.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                flat[f"{key}.{sub}"] = v
        else:
            flat[key] = value
    return flat


def write_csv(records: list[dict], path) -> None:
    rows = [_flatten(r) for r in records]
    columns = sorted({k for row in rows for k in row})
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _series(records, key):
    pairs = [(r["epoch"], r[key]) for r in records if key in r]
    if not pairs:
        return [], []
    return [p[0] for p in pairs], [p[1] for p in pairs]


_LOSS_KEYS = [
    ("train_loss_c", "train cross entropy"),
    ("holdout_loss_c", "holdout cross entropy"),
    ("train_loss_f", "train fidelity"),
    ("holdout_loss_f", "holdout fidelity"),
    ("train_loss_m", "train mimic"),
    ("holdout_loss_m", "holdout mimic"),
    ("train_loss_joint", "train joint"),
    ("holdout_loss_joint", "holdout joint"),
]

_ACC_KEYS = [
    ("holdout_accuracy", "holdout accuracy"),
    ("holdout_acc_enhanced", "enhanced frames"),
    ("holdout_acc_noisy", "noisy frames"),
]


def _save(fig, path) -> Path:
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def render_figures(records: list[dict], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=_FIGSIZE)
    plotted = False
    for key, label in _LOSS_KEYS:
        epochs, values = _series(records, key)
        if epochs and any(v > 0 for v in values):
            ax.plot(epochs, values, marker="o", markersize=3, label=label)
            plotted = True
    if plotted:
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
        written.append(_save(fig, out_dir / "loss_curves.png"))
    else:
        plt.close(fig)

    acc_series = [(k, l, *_series(records, k)) for k, l in _ACC_KEYS]
    acc_series = [s for s in acc_series if s[2]]
    if acc_series:
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        for key, label, epochs, values in acc_series:
            ax.plot(epochs, values, marker="o", markersize=3, label=label)
        ax.set_xlabel("epoch")
        ax.set_ylabel("frame accuracy")
        ax.set_ylim(0.0, 1.0)
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
        written.append(_save(fig, out_dir / "accuracy.png"))

    final_snr = [r for r in records if "holdout_mse_enhanced_by_snr" in r]
    if final_snr:
        record = final_snr[-1]
        enhanced = record["holdout_mse_enhanced_by_snr"]
        noisy = record.get("holdout_mse_noisy_by_snr", {})
        snrs = sorted(enhanced, key=float)
        x = range(len(snrs))
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        width = 0.38
        ax.bar([i - width / 2 for i in x], [noisy.get(s, 0.0) for s in snrs],
               width, label="noisy input")
        ax.bar([i + width / 2 for i in x], [enhanced[s] for s in snrs],
               width, label="enhanced output")
        ax.set_xticks(list(x))
        ax.set_xticklabels([f"{s} dB" for s in snrs])
        ax.set_ylabel("holdout MSE vs clean")
        ax.set_xlabel("mixing SNR")
        ax.legend(fontsize=8)
        ax.grid(True, axis="y", alpha=0.3)
        written.append(_save(fig, out_dir / "snr_breakdown.png"))
    return written


def run_report(jsonl_path, out_dir) -> tuple[list[dict], list[Path]]:
    """Audit one report file and render its CSV and figures.

    Returns (identity violations, written files).
    """
    records = load_records(jsonl_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    violations = check_joint_identity(records)
    csv_path = out_dir / "report.csv"
    write_csv(records, csv_path)
    files = [csv_path] + render_figures(records, out_dir)
    for v in violations:
        log.error(
            "joint-loss identity violated at epoch %s (%s): logged %.12g vs %.12g",
            v["epoch"], v["split"], v["logged"], v["recomputed"],
        )
    return violations, files
