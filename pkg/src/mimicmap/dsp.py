"""Spectral feature front end.

Converts 16 kHz audio into per-frame log-magnitude spectra and augments
them for network consumption:

    log|STFT|  (T, 257)
      -> append first/second temporal regression coefficients  (T, 771)
      -> concatenate an 11-frame context window                (T, 8481)

All three steps are deterministic, finite-valued, and linear past the
log stage, so the delta/splice chain can also be expressed as an explicit
linear operator (`ContextExpander`) whose adjoint backpropagates gradients
from spliced space down to the static spectra.
"""

from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
FRAME_LEN = 400          # 25 ms at 16 kHz
HOP = 160                # 10 ms shift
FFT_SIZE = 512
N_BINS = FFT_SIZE // 2 + 1
LOG_FLOOR = 1e-10        # magnitude floor; keeps log finite on silence
DELTA_WINDOW = 2
SPLICE_CONTEXT = 5

KIND_LOGMAG = "logmag"
KIND_DELTAS = "logmag_deltas"
KIND_SPLICED = "spliced"


@dataclass(frozen=True)
class FeatureGeometry:
    """Dimensional contract of the feature chain.

    The production geometry is (257 bins, delta window 2, context 5),
    giving the 257 / 771 / 8481 chain. Smaller geometries are used by
    tests that need cheap end-to-end gradient checks.
    """

    n_bins: int = N_BINS
    delta_window: int = DELTA_WINDOW
    context: int = SPLICE_CONTEXT

    @property
    def dim_static(self) -> int:
        return self.n_bins

    @property
    def dim_deltas(self) -> int:
        return 3 * self.n_bins

    @property
    def dim_spliced(self) -> int:
        return (2 * self.context + 1) * 3 * self.n_bins


DEFAULT_GEOMETRY = FeatureGeometry()

_KIND_DIMS = {
    KIND_LOGMAG: DEFAULT_GEOMETRY.dim_static,
    KIND_DELTAS: DEFAULT_GEOMETRY.dim_deltas,
    KIND_SPLICED: DEFAULT_GEOMETRY.dim_spliced,
}


@dataclass(frozen=True)
class Utterance:
    """A mono 16 kHz sample sequence plus identifier."""

    utt_id: str
    samples: np.ndarray


@dataclass(frozen=True)
class FeatureSequence:
    """(T, dim) frame matrix whose dim is pinned by its kind tag."""

    data: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in _KIND_DIMS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.data.ndim != 2 or self.data.shape[1] != _KIND_DIMS[self.kind]:
            raise ValueError(
                f"{self.kind} features must have dim {_KIND_DIMS[self.kind]}, "
                f"got shape {self.data.shape}"
            )
        if not np.isfinite(self.data).all():
            raise ValueError("feature values must be finite")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def frame_count(n_samples: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    if n_samples < frame_len:
        raise ValueError(
            f"utterance too short: {n_samples} samples < one {frame_len}-sample frame"
        )
    return 1 + (n_samples - frame_len) // hop


def stft_log_magnitude(
    signal: np.ndarray,
    frame_len: int = FRAME_LEN,
    hop: int = HOP,
    fft_size: int = FFT_SIZE,
    floor: float = LOG_FLOOR,
) -> FeatureSequence:
    """Framed log-magnitude spectrum of a mono signal.

    25 ms Hamming-windowed frames every 10 ms, zero-padded to `fft_size`
    points; each frame yields fft_size//2 + 1 values ln(max(|X_k|, floor)).
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a mono sample vector, got shape {x.shape}")
    n_frames = frame_count(len(x), frame_len, hop)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hamming(frame_len)[None, :]
    mags = np.abs(np.fft.rfft(frames, n=fft_size, axis=1))
    return FeatureSequence(np.log(np.maximum(mags, floor)), KIND_LOGMAG)


def delta_features(feats: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """Regression slope of each feature trajectory.

    d_t = sum_{n=1..N} n * (c_{t+n} - c_{t-n}) / (2 * sum_{n=1..N} n^2),
    with boundary frames replicated so the frame count is preserved.
    Works on any (T, dim) matrix.
    """
    x = np.asarray(feats, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (T, dim) features, got shape {x.shape}")
    n = x.shape[0]
    padded = np.pad(x, ((window, window), (0, 0)), mode="edge")
    num = np.zeros_like(x)
    for k in range(1, window + 1):
        num += k * (padded[window + k : window + k + n] - padded[window - k : window - k + n])
    return num / (2.0 * sum(k * k for k in range(1, window + 1)))


def splice_frames(feats: np.ndarray, context: int = SPLICE_CONTEXT) -> np.ndarray:
    """Concatenate each frame with +-context neighbours (edges replicated)."""
    x = np.asarray(feats, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (T, dim) features, got shape {x.shape}")
    n = x.shape[0]
    idx = np.clip(
        np.arange(n)[:, None] + np.arange(-context, context + 1)[None, :], 0, n - 1
    )
    return x[idx].reshape(n, -1)


def compute_deltas(feats: FeatureSequence) -> FeatureSequence:
    """Append delta and double-delta blocks to a log-magnitude sequence."""
    if feats.kind != KIND_LOGMAG:
        raise ValueError(f"compute_deltas expects {KIND_LOGMAG} input, got {feats.kind}")
    d = delta_features(feats.data)
    dd = delta_features(d)
    return FeatureSequence(np.hstack([feats.data, d, dd]), KIND_DELTAS)


def splice(feats: FeatureSequence, context: int = SPLICE_CONTEXT) -> FeatureSequence:
    """Context-window a delta-augmented sequence into network input frames."""
    if feats.kind != KIND_DELTAS:
        raise ValueError(f"splice expects {KIND_DELTAS} input, got {feats.kind}")
    return FeatureSequence(splice_frames(feats.data, context), KIND_SPLICED)


def expand_static(static: np.ndarray, geometry: FeatureGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
    """Static (T, n_bins) frames -> spliced (T, dim_spliced) network input."""
    d = delta_features(static, geometry.delta_window)
    dd = delta_features(d, geometry.delta_window)
    return splice_frames(np.hstack([static, d, dd]), geometry.context)


def featurize_utterance(u: Utterance) -> tuple[FeatureSequence, FeatureSequence]:
    """Full front end for one utterance.

    Returns (spliced network input, static log-magnitude targets). The
    spliced output feeds the mapper and classifier; the static output is
    the per-frame regression target of the enhancement stage.
    """
    logmag = stft_log_magnitude(u.samples)
    spliced = splice(compute_deltas(logmag))
    return spliced, logmag


def delta_matrix(n_frames: int, window: int = DELTA_WINDOW) -> np.ndarray:
    """(T, T) matrix form of `delta_features` with replicated edges."""
    denom = 2.0 * sum(k * k for k in range(1, window + 1))
    m = np.zeros((n_frames, n_frames))
    rows = np.arange(n_frames)
    for k in range(1, window + 1):
        np.add.at(m, (rows, np.clip(rows + k, 0, n_frames - 1)), k / denom)
        np.add.at(m, (rows, np.clip(rows - k, 0, n_frames - 1)), -k / denom)
    return m


class ContextExpander:
    """Linear operator from static frames to spliced network input.

    Forward matches `expand_static` up to floating-point association; the
    backward pass is the exact adjoint, which lets training graphs route
    gradients from spliced classifier inputs back to the static spectra
    that produced them. Instances are tied to one frame count.
    """

    def __init__(self, n_frames: int, geometry: FeatureGeometry = DEFAULT_GEOMETRY):
        if n_frames < 1:
            raise ValueError("need at least one frame")
        self.n_frames = n_frames
        self.geometry = geometry
        d1 = delta_matrix(n_frames, geometry.delta_window)
        self._mix = [np.eye(n_frames), d1, d1 @ d1]
        self._idx = np.clip(
            np.arange(n_frames)[:, None]
            + np.arange(-geometry.context, geometry.context + 1)[None, :],
            0,
            n_frames - 1,
        )

    def forward(self, static: np.ndarray) -> np.ndarray:
        if static.shape != (self.n_frames, self.geometry.n_bins):
            raise ValueError(
                f"expected {(self.n_frames, self.geometry.n_bins)}, got {static.shape}"
            )
        tracks = np.hstack([m @ static for m in self._mix])
        return tracks[self._idx].reshape(self.n_frames, -1)

    def backward(self, grad_spliced: np.ndarray) -> np.ndarray:
        """Adjoint map: gradient w.r.t. the static frames."""
        g = self.geometry
        expect = (self.n_frames, g.dim_spliced)
        if grad_spliced.shape != expect:
            raise ValueError(f"expected {expect}, got {grad_spliced.shape}")
        windows = grad_spliced.reshape(self.n_frames, 2 * g.context + 1, g.dim_deltas)
        grad_tracks = np.zeros((self.n_frames, g.dim_deltas))
        np.add.at(grad_tracks, self._idx, windows)
        b = g.n_bins
        return (
            grad_tracks[:, :b]
            + self._mix[1].T @ grad_tracks[:, b : 2 * b]
            + self._mix[2].T @ grad_tracks[:, 2 * b :]
        )
