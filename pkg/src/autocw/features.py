"""Framing, log-mel / MFCC features and context-window splicing."""
from __future__ import annotations

import csv
import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.fft import dct, rfft

from .acoustics import Signal

LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8


class FeatureError(ValueError):
    pass


class FeatureKind(str, enum.Enum):
    FBANK = "FBANK"
    MFCC = "MFCC"


@dataclass(frozen=True)
class FeatureConfig:
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 40
    n_cepstra: int = 13
    feature_kind: FeatureKind = FeatureKind.MFCC
    delta_order: int = 2
    fft_size: int | None = None
    low_freq: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "feature_kind", FeatureKind(self.feature_kind))
        if self.hop_ms > self.frame_len_ms:
            raise FeatureError("hop_ms must not exceed frame_len_ms")
        if self.n_cepstra > self.n_mels:
            raise FeatureError("n_cepstra must not exceed n_mels")
        if self.delta_order not in (0, 1, 2):
            raise FeatureError("delta_order must be 0, 1 or 2")
        if self.fft_size is not None and self.fft_size & (self.fft_size - 1):
            raise FeatureError("fft_size must be a power of two")

    def frame_samples(self, fs: int) -> tuple[int, int]:
        return int(round(self.frame_len_ms * fs / 1000.0)), int(round(self.hop_ms * fs / 1000.0))

    def n_fft(self, fs: int) -> int:
        frame_len, _ = self.frame_samples(fs)
        n = self.fft_size or 1 << max(frame_len - 1, 1).bit_length()
        if n < frame_len:
            raise FeatureError(f"fft_size {n} shorter than the frame ({frame_len} samples)")
        return n

    @property
    def n_features(self) -> int:
        if self.feature_kind is FeatureKind.FBANK:
            base = self.n_mels
        else:
            base = self.n_cepstra
        return base * (1 + self.delta_order)


@dataclass
class FrameMatrix:
    data: np.ndarray
    labels: np.ndarray | None = None
    frame_times: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise FeatureError("frame matrix must be 2-D")
        if not np.all(np.isfinite(self.data)):
            raise FeatureError("frame matrix contains NaN or Inf")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n_frames,):
                raise FeatureError(
                    f"label track length {self.labels.shape[0]} != {self.n_frames} frames")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_features(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ContextWindowSpec:
    """Past/future frame counts; ``str(spec)`` gives the ``a-1-b`` notation."""

    n_past: int
    n_future: int

    def __post_init__(self):
        if self.n_past < 0 or self.n_future < 0:
            raise FeatureError("context sizes must be non-negative")

    @property
    def length(self) -> int:
        return self.n_past + 1 + self.n_future

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.n_past, self.n_future + 1)

    @classmethod
    def symmetric(cls, half: int) -> "ContextWindowSpec":
        return cls(half, half)

    @classmethod
    def parse(cls, text: str) -> "ContextWindowSpec":
        parts = text.strip().split("-")
        if len(parts) != 3 or parts[1] != "1":
            raise FeatureError(f"expected 'a-1-b', got {text!r}")
        return cls(int(parts[0]), int(parts[2]))

    def __str__(self):
        return f"{self.n_past}-1-{self.n_future}"


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def frame_signal(x: Signal, cfg: FeatureConfig) -> np.ndarray:
    """Hamming-windowed frames, shape ``(n_frames, frame_len)``."""
    frame_len, hop = cfg.frame_samples(x.sample_rate)
    n = len(x)
    if n < frame_len:
        raise FeatureError(f"signal of {n} samples is shorter than one frame ({frame_len})")
    n_frames = (n - frame_len) // hop + 1
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x.samples[idx] * np.hamming(frame_len)[None, :]


def num_frames(n_samples: int, fs: int, cfg: FeatureConfig) -> int:
    frame_len, hop = cfg.frame_samples(fs)
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, fs: int, low_freq: float = 20.0,
                   high_freq: float | None = None) -> np.ndarray:
    """HTK-style triangular filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    high_freq = fs / 2.0 if high_freq is None else high_freq
    edges = mel_to_hz(np.linspace(hz_to_mel(low_freq), hz_to_mel(high_freq), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, 1.0 / fs)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lower) / (center - lower)
    falling = (upper - bins[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def compute_deltas(m, K: int = 2) -> np.ndarray:
    """Regression deltas over +-K frames with replicated edge frames."""
    if K < 1:
        raise FeatureError("delta window K must be >= 1")
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise FeatureError("deltas need a 2-D matrix")
    n = m.shape[0]
    padded = np.concatenate([np.repeat(m[:1], K, axis=0), m, np.repeat(m[-1:], K, axis=0)])
    out = np.zeros_like(m)
    for k in range(1, K + 1):
        out += k * (padded[K + k:K + k + n] - padded[K - k:K - k + n])
    return out / (2.0 * sum(k * k for k in range(1, K + 1)))


def extract_features(x: Signal, cfg: FeatureConfig = FeatureConfig(),
                     labels=None) -> FrameMatrix:
    frames = frame_signal(x, cfg)
    fs = x.sample_rate
    n_fft = cfg.n_fft(fs)
    power = np.abs(rfft(frames, n=n_fft, axis=1)) ** 2
    fbank = mel_filterbank(cfg.n_mels, n_fft, fs, cfg.low_freq)
    feats = np.log(np.maximum(power @ fbank.T, LOG_FLOOR))
    if cfg.feature_kind is FeatureKind.MFCC:
        feats = dct(feats, type=2, norm="ortho", axis=1)[:, :cfg.n_cepstra]
    blocks = [feats]
    for _ in range(cfg.delta_order):
        blocks.append(compute_deltas(blocks[-1]))
    frame_len, hop = cfg.frame_samples(fs)
    times = (np.arange(frames.shape[0]) * hop + frame_len / 2.0) / fs
    return FrameMatrix(np.hstack(blocks), labels, times)


def fit_normalizer(m) -> NormStats:
    data = _stack(m)
    if data.shape[0] < 2:
        raise FeatureError("need at least two frames to fit a normalizer")
    mean = data.mean(axis=0)
    const = np.all(data == data[0], axis=0)
    mean[const] = data[0, const]  # exact, so constant dimensions map to exact zeros
    return NormStats(mean, np.maximum(data.std(axis=0), STD_FLOOR))


def apply_normalizer(m: FrameMatrix, stats: NormStats) -> FrameMatrix:
    return FrameMatrix((m.data - stats.mean) / stats.std, m.labels, m.frame_times)


def _stack(m) -> np.ndarray:
    if isinstance(m, FrameMatrix):
        return m.data
    if isinstance(m, np.ndarray):
        return m
    return np.vstack([fm.data for fm in m])


def context_indices(n_frames: int, spec: ContextWindowSpec) -> np.ndarray:
    idx = np.arange(n_frames)[:, None] + spec.offsets[None, :]
    return np.clip(idx, 0, n_frames - 1)


def assemble_context(m, spec: ContextWindowSpec) -> np.ndarray:
    """Splice ``[y_{k-Np} .. y_k .. y_{k+Nf}]`` into row k, clamping at the edges."""
    data = m.data if isinstance(m, FrameMatrix) else np.asarray(m)
    if data.ndim != 2 or data.shape[0] == 0:
        raise FeatureError("cannot assemble context on an empty matrix")
    n, d = data.shape
    return data[context_indices(n, spec)].reshape(n, spec.length * d)


def assemble_dataset(mats: Sequence[FrameMatrix], spec: ContextWindowSpec):
    """Per-utterance splicing (windows never cross utterances), stacked."""
    if not mats:
        raise FeatureError("no utterances to assemble")
    x = np.vstack([assemble_context(m, spec) for m in mats])
    if any(m.labels is None for m in mats):
        return x, None
    return x, np.concatenate([m.labels for m in mats])


def rho_cw(spec: ContextWindowSpec) -> float:
    """Percentage of context frames that lie in the past."""
    total = spec.n_past + spec.n_future
    if total == 0:
        raise FeatureError("rho_cw is undefined for a window without context frames")
    return 100.0 * spec.n_past / total


def _lag_pairs(clean: Sequence[FrameMatrix], rev: Sequence[FrameMatrix], p: int):
    xs, ys = [], []
    for a, b in zip(clean, rev):
        n = a.n_frames
        if p >= 0:
            xs.append(a.data[:n - p] if p else a.data)
            ys.append(b.data[p:])
        else:
            xs.append(a.data[-p:])
            ys.append(b.data[:n + p])
    return np.vstack(xs), np.vstack(ys)


def pearson_lag_profile(clean, rev, n_past: int, n_future: int) -> dict[int, float]:
    """Pearson coefficient between clean frames x_k and reverberated frames y_{k+p}.

    Frame vectors are centred per dimension over the overlapping frames and
    the coefficient is pooled over frames and dimensions. Lists of matrices
    are pooled utterance by utterance (no pairs across utterances).
    """
    clean = [clean] if isinstance(clean, FrameMatrix) else list(clean)
    rev = [rev] if isinstance(rev, FrameMatrix) else list(rev)
    if len(clean) != len(rev):
        raise FeatureError("clean and reverberated lists differ in length")
    for a, b in zip(clean, rev):
        if a.data.shape != b.data.shape:
            raise FeatureError("paired matrices must have equal shape")
    out = {}
    for p in range(-n_past, n_future + 1):
        x, y = _lag_pairs(clean, rev, p)
        if x.shape[0] < 2:
            raise FeatureError(f"not enough overlapping frames at lag {p}")
        xc = x - x.mean(axis=0)
        yc = y - y.mean(axis=0)
        den = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
        if den == 0:
            raise FeatureError("zero-variance input")
        out[p] = float(np.clip(np.sum(xc * yc) / den, -1.0, 1.0))
    return out


# --- persistence -----------------------------------------------------------

_MATRIX_MAGIC = b"CWF1"
_LABEL_MAGIC = b"CWL1"


def write_frame_matrix(path, m) -> None:
    data = _stack(m)
    with open(path, "wb") as fh:
        fh.write(_MATRIX_MAGIC)
        fh.write(struct.pack("<II", *data.shape))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_frame_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MATRIX_MAGIC:
        raise FeatureError(f"{path}: bad magic {raw[:4]!r}")
    n_fr, n_fea = struct.unpack("<II", raw[4:12])
    body = np.frombuffer(raw, dtype="<f4", offset=12)
    if body.size != n_fr * n_fea:
        raise FeatureError(f"{path}: truncated matrix")
    return body.reshape(n_fr, n_fea).astype(np.float64)


def write_labels(path, labels) -> None:
    labels = np.asarray(labels)
    with open(path, "wb") as fh:
        fh.write(_LABEL_MAGIC)
        fh.write(struct.pack("<I", labels.shape[0]))
        fh.write(np.ascontiguousarray(labels, dtype="<i4").tobytes())


def read_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _LABEL_MAGIC:
        raise FeatureError(f"{path}: bad magic {raw[:4]!r}")
    (n,) = struct.unpack("<I", raw[4:8])
    body = np.frombuffer(raw, dtype="<i4", offset=8)
    if body.size != n:
        raise FeatureError(f"{path}: truncated label file")
    return body.astype(np.int64)


def write_csv(path, m: FrameMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"f{i}" for i in range(m.n_features)]
        if m.labels is not None:
            header.append("label")
        w.writerow(header)
        for i, row in enumerate(m.data):
            cells = [repr(float(v)) for v in row]
            if m.labels is not None:
                cells.append(int(m.labels[i]))
            w.writerow(cells)
