"""Corpus handling.

Covers WAV ingestion (16-bit PCM, 16 kHz, stereo averaged to mono),
SNR-controlled mixing of clean signals with noise, a seeded synthetic
parallel corpus of pseudo-speech plus colored noise, k-means frame
labels standing in for forced alignments, binary feature/label archives,
and deterministic epoch batching.
"""

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import SAMPLE_RATE, Utterance, stft_log_magnitude

log = logging.getLogger(__name__)

SNR_GRID_DB = (-6.0, -3.0, 0.0, 3.0, 6.0, 9.0)

ARCHIVE_MAGIC = b"MMFA"
ARCHIVE_VERSION = 1
LABEL_MAGIC = b"MMLB"

_PCM_SCALE = 32768.0


# ---------------------------------------------------------------------------
# WAV I/O


def read_wav(path) -> np.ndarray:
    """Load 16-bit PCM at 16 kHz as float64 in [-1, 1); stereo is averaged."""
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz audio, got {rate}")
    if data.dtype != np.int16:
        raise ValueError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    if data.ndim == 2:
        samples = data.mean(axis=1) / _PCM_SCALE
    else:
        samples = data.astype(np.float64) / _PCM_SCALE
    return samples


def write_wav(path, samples: np.ndarray) -> None:
    """Quantize float samples to 16-bit PCM and write a mono RIFF file."""
    q = np.clip(np.round(np.asarray(samples) * _PCM_SCALE), -32768, 32767).astype(np.int16)
    wavfile.write(path, SAMPLE_RATE, q)


def quantize_like_wav(samples: np.ndarray) -> np.ndarray:
    """The float values a signal will carry after a WAV round trip."""
    q = np.clip(np.round(np.asarray(samples) * _PCM_SCALE), -32768, 32767)
    return q / _PCM_SCALE


# ---------------------------------------------------------------------------
# SNR mixing


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def measure_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    """SNR implied by a parallel pair, treating noisy - clean as the noise."""
    noise = noisy - clean
    return 20.0 * np.log10(rms(clean) / rms(noise))


def mix_at_snr(
    clean: np.ndarray,
    noise: np.ndarray,
    snr_db: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Add a scaled noise crop to `clean` so the mix hits `snr_db` exactly.

    The noise must be at least as long as the clean signal; the crop
    offset is drawn from `rng` (offset 0 when rng is None). The noise is
    scaled by rms(clean)/rms(crop) * 10^(-snr_db/20).
    """
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) < len(clean):
        raise ValueError("noise must be at least as long as the clean signal")
    max_offset = len(noise) - len(clean)
    offset = int(rng.integers(0, max_offset + 1)) if rng is not None else 0
    crop = noise[offset : offset + len(clean)]
    clean_rms = rms(clean)
    crop_rms = rms(crop)
    if clean_rms == 0.0 or crop_rms == 0.0:
        raise ValueError("cannot mix silent signals (zero rms)")
    scale = clean_rms / crop_rms * 10.0 ** (-snr_db / 20.0)
    return clean + scale * crop


# ---------------------------------------------------------------------------
# Synthetic parallel corpus


@dataclass
class CorpusEntry:
    utt_id: str
    clean_audio: str
    noisy_audio: str
    snr_db: float
    labels: str | None = None
    clean_features: str | None = None
    noisy_features: str | None = None


@dataclass
class ParallelCorpus:
    root: Path
    entries: list[CorpusEntry]
    meta: dict = field(default_factory=dict)

    def path(self, relative: str) -> Path:
        return self.root / relative


def _pseudo_speech(n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Harmonic tone stack under a segmented amplitude envelope.

    Randomized fundamental (80-300 Hz) with 3-8 decaying harmonics gives
    the signal structure across frequency; the piecewise envelope with
    smoothed edges gives it syllable-like structure across time.
    """
    t = np.arange(n_samples) / SAMPLE_RATE
    f0 = rng.uniform(80.0, 300.0)
    drift = rng.uniform(-0.05, 0.05)
    phase_base = 2.0 * np.pi * f0 * (t + 0.5 * drift * t * t / t[-1])
    n_harmonics = int(rng.integers(3, 9))
    x = np.zeros(n_samples)
    for h in range(1, n_harmonics + 1):
        amp = rng.uniform(0.5, 1.0) / h
        x += amp * np.sin(h * phase_base + rng.uniform(0.0, 2.0 * np.pi))

    envelope = np.zeros(n_samples)
    pos = 0
    while pos < n_samples:
        seg = int(rng.uniform(0.08, 0.25) * SAMPLE_RATE)
        level = rng.uniform(0.15, 1.0)
        envelope[pos : pos + seg] = level
        pos += seg
    ramp = int(0.01 * SAMPLE_RATE)
    kernel = np.hanning(2 * ramp + 1)
    envelope = np.convolve(envelope, kernel / kernel.sum(), mode="same")
    x *= envelope
    return 0.05 * x / rms(x)


def _colored_noise(n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise with a random 1/f^b spectral tilt."""
    white = rng.standard_normal(n_samples)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / SAMPLE_RATE)
    tilt = rng.uniform(0.4, 1.4)
    shaping = 1.0 / np.maximum(freqs, 20.0) ** (tilt / 2.0)
    noise = np.fft.irfft(spectrum * shaping, n=n_samples)
    return noise / rms(noise)


def generate_synthetic_corpus(
    n_utterances: int,
    seed: int,
    out_dir,
    min_duration_s: float = 0.9,
    max_duration_s: float = 1.3,
) -> ParallelCorpus:
    """Write a parallel clean/noisy WAV corpus stratified over the SNR grid.

    Fully reproducible from `seed`: utterance i is generated from its own
    child generator, so corpus size changes do not reshuffle existing
    utterances. SNR conditions cycle through the grid, giving equal strata
    when n_utterances is a multiple of its length. Returned (and saved)
    manifest paths are relative to `out_dir`.
    """
    out_dir = Path(out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "noisy").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_utterances):
        rng = np.random.default_rng([int(seed), i])
        snr_db = SNR_GRID_DB[i % len(SNR_GRID_DB)]
        n_samples = int(rng.uniform(min_duration_s, max_duration_s) * SAMPLE_RATE)
        clean = quantize_like_wav(_pseudo_speech(n_samples, rng))
        noise = _colored_noise(n_samples + SAMPLE_RATE // 2, rng)
        noisy = quantize_like_wav(mix_at_snr(clean, noise, snr_db, rng))
        utt_id = f"utt{i:04d}"
        clean_rel = f"clean/{utt_id}.wav"
        noisy_rel = f"noisy/{utt_id}.wav"
        write_wav(out_dir / clean_rel, clean)
        write_wav(out_dir / noisy_rel, noisy)
        entries.append(CorpusEntry(utt_id, clean_rel, noisy_rel, snr_db))
    corpus = ParallelCorpus(
        out_dir, entries, meta={"seed": int(seed), "n_utterances": n_utterances}
    )
    save_manifest(corpus)
    log.info("generated %d utterances under %s", n_utterances, out_dir)
    return corpus


# ---------------------------------------------------------------------------
# Manifest


def manifest_path(root) -> Path:
    return Path(root) / "manifest.json"


def save_manifest(corpus: ParallelCorpus) -> Path:
    payload = {
        "meta": corpus.meta,
        "entries": [
            {k: v for k, v in vars(e).items() if v is not None} for e in corpus.entries
        ],
    }
    path = manifest_path(corpus.root)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> ParallelCorpus:
    path = Path(path)
    payload = json.loads(path.read_text())
    entries = [CorpusEntry(**e) for e in payload["entries"]]
    return ParallelCorpus(path.parent, entries, payload.get("meta", {}))


def load_utterance(corpus: ParallelCorpus, entry: CorpusEntry, which: str) -> Utterance:
    rel = entry.clean_audio if which == "clean" else entry.noisy_audio
    return Utterance(entry.utt_id, read_wav(corpus.path(rel)))


# ---------------------------------------------------------------------------
# Feature and label archives


def write_feature_archive(path, feats: np.ndarray) -> None:
    feats = np.asarray(feats)
    if feats.ndim != 2:
        raise ValueError(f"expected (frames, dim), got {feats.shape}")
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<HII", ARCHIVE_VERSION, feats.shape[0], feats.shape[1]))
        f.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())


def read_feature_archive(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != ARCHIVE_MAGIC:
        raise ValueError(f"{path}: not a feature archive")
    version, n_frames, dim = struct.unpack_from("<HII", data, 4)
    if version != ARCHIVE_VERSION:
        raise ValueError(f"{path}: unsupported archive version {version}")
    values = np.frombuffer(data, dtype="<f4", count=n_frames * dim, offset=14)
    return values.astype(np.float64).reshape(n_frames, dim)


def write_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    with open(path, "wb") as f:
        f.write(LABEL_MAGIC)
        f.write(struct.pack("<I", len(labels)))
        f.write(np.ascontiguousarray(labels, dtype="<u4").tobytes())


def read_labels(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != LABEL_MAGIC:
        raise ValueError(f"{path}: not a label file")
    (count,) = struct.unpack_from("<I", data, 4)
    return np.frombuffer(data, dtype="<u4", count=count, offset=8).astype(np.int64)


# ---------------------------------------------------------------------------
# Frame labels via vector quantization


def kmeans_codebook(
    frames: np.ndarray, n_classes: int, seed: int, max_iter: int = 25
) -> tuple[np.ndarray, list[float]]:
    """Lloyd's algorithm over feature frames.

    Returns (centroids, per-iteration mean squared distortion). The
    distortion sequence is non-increasing, which tests use as an oracle.
    Initial centroids are drawn without replacement from the distinct
    frames, so there are never duplicate seeds.
    """
    frames = np.asarray(frames, dtype=np.float64)
    seen = set()
    distinct_rows = []
    for i in range(frames.shape[0]):
        key = frames[i].tobytes()
        if key not in seen:
            seen.add(key)
            distinct_rows.append(i)
    if n_classes > len(distinct_rows):
        raise ValueError(
            f"n_classes={n_classes} exceeds the {len(distinct_rows)} distinct frames"
        )
    rng = np.random.default_rng([int(seed), 0x6B6D])
    pick = rng.choice(len(distinct_rows), size=n_classes, replace=False)
    centroids = frames[np.asarray(distinct_rows)[pick]].copy()

    assignments = None
    distortions = []
    for _ in range(max_iter):
        dists = _sq_distances(frames, centroids)
        new_assignments = np.argmin(dists, axis=1)
        distortions.append(float(dists[np.arange(len(frames)), new_assignments].mean()))
        if assignments is not None and np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for c in range(n_classes):
            members = frames[assignments == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                # re-seat an empty cluster on the worst-served frame
                worst = np.argmax(dists[np.arange(len(frames)), assignments])
                centroids[c] = frames[worst]
    return centroids, distortions


def _sq_distances(frames: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||f - c||^2 expanded to keep memory at (n_frames, n_classes)
    f2 = np.sum(frames * frames, axis=1)[:, None]
    c2 = np.sum(centroids * centroids, axis=1)[None, :]
    return np.maximum(f2 + c2 - 2.0 * frames @ centroids.T, 0.0)


def assign_labels(frames: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.argmin(_sq_distances(np.asarray(frames, dtype=np.float64), centroids), axis=1)


def generate_labels(
    clean_features: list[np.ndarray], n_classes: int, seed: int
) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-utterance frame labels from a corpus-level k-means codebook.

    Identical frames always receive identical labels, and each label
    sequence has exactly one entry per feature frame.
    """
    if not clean_features:
        raise ValueError("no features to label")
    stacked = np.vstack(clean_features)
    centroids, _ = kmeans_codebook(stacked, n_classes, seed)
    return [assign_labels(f, centroids) for f in clean_features], centroids


# ---------------------------------------------------------------------------
# Featurization over a corpus


@dataclass
class UtteranceFeatures:
    """Training-facing view of one corpus entry."""

    utt_id: str
    snr_db: float
    clean_logmag: np.ndarray
    noisy_logmag: np.ndarray | None = None
    labels: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return self.clean_logmag.shape[0]


def featurize_corpus(
    corpus: ParallelCorpus, n_classes: int, seed: int, threads: int | None = None
) -> ParallelCorpus:
    """Compute and persist static features and frame labels for a corpus.

    Writes one log-magnitude archive per clean and noisy signal under
    feats/, k-means frame labels under labels/, and rewrites the manifest
    with the new relative paths. Only static spectra are stored; training
    derives deltas and context windows in memory.
    """
    feats_dir = corpus.root / "feats"
    labels_dir = corpus.root / "labels"
    feats_dir.mkdir(exist_ok=True)
    labels_dir.mkdir(exist_ok=True)

    def compute(entry: CorpusEntry):
        clean = stft_log_magnitude(read_wav(corpus.path(entry.clean_audio))).data
        noisy = stft_log_magnitude(read_wav(corpus.path(entry.noisy_audio))).data
        return clean, noisy

    with ThreadPoolExecutor(max_workers=threads) as pool:
        computed = list(pool.map(compute, corpus.entries))

    clean_list = []
    for entry, (clean, noisy) in zip(corpus.entries, computed):
        entry.clean_features = f"feats/{entry.utt_id}.clean.mmfa"
        entry.noisy_features = f"feats/{entry.utt_id}.noisy.mmfa"
        write_feature_archive(corpus.path(entry.clean_features), clean)
        write_feature_archive(corpus.path(entry.noisy_features), noisy)
        clean_list.append(clean)

    label_seqs, _ = generate_labels(clean_list, n_classes, seed)
    for entry, labels in zip(corpus.entries, label_seqs):
        entry.labels = f"labels/{entry.utt_id}.mmlb"
        write_labels(corpus.path(entry.labels), labels)

    corpus.meta["n_classes"] = int(n_classes)
    corpus.meta["label_seed"] = int(seed)
    save_manifest(corpus)
    log.info("featurized %d utterances (%d label classes)", len(corpus.entries), n_classes)
    return corpus


def load_corpus_features(corpus: ParallelCorpus) -> list[UtteranceFeatures]:
    """Load the per-utterance feature/label views referenced by a manifest."""
    utts = []
    for entry in corpus.entries:
        if entry.clean_features is None or entry.noisy_features is None:
            raise ValueError(f"{entry.utt_id}: no feature archives (run featurize first)")
        utts.append(
            UtteranceFeatures(
                utt_id=entry.utt_id,
                snr_db=entry.snr_db,
                clean_logmag=read_feature_archive(corpus.path(entry.clean_features)),
                noisy_logmag=read_feature_archive(corpus.path(entry.noisy_features)),
                labels=read_labels(corpus.path(entry.labels)) if entry.labels else None,
            )
        )
    return utts


# ---------------------------------------------------------------------------
# Deterministic batching and splits


def batcher(n_items: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index batches; the permutation is a pure function of (seed, epoch)."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    perm = np.random.default_rng([int(seed), int(epoch)]).permutation(n_items)
    return [perm[i : i + batch_size] for i in range(0, n_items, batch_size)]


def split_holdout(items: list, snrs: list[float], fraction: float, seed: int):
    """Stratified train/holdout split over SNR conditions.

    Each stratum contributes ceil(fraction * size) items to the holdout,
    chosen by a seeded shuffle, so every condition stays represented. A
    stratum is never held out entirely, which keeps tiny corpora trainable
    (their holdout may then be empty).
    Returns (train_indices, holdout_indices) into `items`.
    """
    if len(items) != len(snrs):
        raise ValueError("items and snrs must align")
    by_snr: dict[float, list[int]] = {}
    for i, s in enumerate(snrs):
        by_snr.setdefault(float(s), []).append(i)
    rng = np.random.default_rng([int(seed), 0x5B17])
    holdout = []
    for snr in sorted(by_snr):
        idx = np.array(by_snr[snr])
        take = max(1, int(np.ceil(fraction * len(idx)))) if fraction > 0 else 0
        take = min(take, len(idx) - 1)
        holdout.extend(idx[rng.permutation(len(idx))[:take]].tolist())
    holdout_set = set(holdout)
    train = [i for i in range(len(items)) if i not in holdout_set]
    return train, sorted(holdout)
