"""Toy speech-like corpora with frame labels, and their contamination.

Each class ("phoneme") owns a fixed two-resonance all-pole filter. Voiced
classes are driven by impulse trains, unvoiced ones by white noise.
Utterances are random sequences of class segments.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from . import acoustics as ac
from .acoustics import ImpulseResponse, Signal
from .features import FeatureConfig, num_frames, read_labels, write_labels


class CorpusError(ValueError):
    pass


class Condition(str, enum.Enum):
    CLEAN = "Clean"
    REV = "Rev"
    REV_NOISE = "RevNoise"


@dataclass(frozen=True)
class CorpusConfig:
    n_classes: int = 6
    n_utterances: int = 40
    utterance_len_s: float = 2.0
    segment_len_ms: tuple[float, float] = (60.0, 200.0)
    sample_rate: int = 16000
    voiced_fraction: float = 0.5
    seed: int = 0
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    pitch_hz: tuple[float, float] = (80.0, 250.0)

    def __post_init__(self):
        object.__setattr__(self, "segment_len_ms", tuple(float(v) for v in self.segment_len_ms))
        object.__setattr__(self, "pitch_hz", tuple(float(v) for v in self.pitch_hz))
        if self.n_classes < 2:
            raise CorpusError("need at least two classes")
        if self.n_utterances < 1 or self.utterance_len_s <= 0:
            raise CorpusError("utterance count and length must be positive")
        lo, hi = self.segment_len_ms
        if not 0 < lo <= hi:
            raise CorpusError("segment length range must be positive and ordered")
        if not 0 <= self.voiced_fraction <= 1:
            raise CorpusError("voiced_fraction must lie in [0, 1]")

    @property
    def frame_config(self) -> FeatureConfig:
        return FeatureConfig(frame_len_ms=self.frame_len_ms, hop_ms=self.hop_ms)


@dataclass(frozen=True)
class ClassModel:
    voiced: bool
    formants_hz: tuple[float, float]
    bandwidths_hz: tuple[float, float]
    denominator: np.ndarray


@dataclass
class Utterance:
    uid: str
    signal: Signal
    labels: np.ndarray
    ir: str = ""
    snr_db: float | None = None


@dataclass
class Corpus:
    utterances: list[Utterance]
    condition: Condition = Condition.CLEAN
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    classes: list[ClassModel] = field(default_factory=list)

    def __len__(self):
        return len(self.utterances)

    @property
    def signals(self) -> list[Signal]:
        return [u.signal for u in self.utterances]

    @property
    def provenance(self) -> list[tuple[str, str, float | None]]:
        return [(u.uid, u.ir, u.snr_db) for u in self.utterances]

    @property
    def label_alphabet(self) -> set[int]:
        return set().union(*(set(np.unique(u.labels).tolist()) for u in self.utterances))

    @property
    def frame_config(self) -> FeatureConfig:
        return FeatureConfig(frame_len_ms=self.frame_len_ms, hop_ms=self.hop_ms)


def _resonator(freq: float, bw: float, fs: int) -> np.ndarray:
    r = math.exp(-math.pi * bw / fs)
    return np.array([1.0, -2.0 * r * math.cos(2 * math.pi * freq / fs), r * r])


def make_class_models(cfg: CorpusConfig, rng: np.random.Generator) -> list[ClassModel]:
    n_voiced = int(round(cfg.voiced_fraction * cfg.n_classes))
    nyq = cfg.sample_rate / 2.0
    models = []
    for k in range(cfg.n_classes):
        voiced = k < n_voiced
        if voiced:
            f1 = rng.uniform(250.0, 900.0)
            f2 = rng.uniform(max(f1 + 300.0, 900.0), 3000.0)
        else:
            f1 = rng.uniform(1500.0, 0.45 * nyq)
            f2 = rng.uniform(f1 + 500.0, 0.9 * nyq)
        bws = (rng.uniform(60.0, 200.0), rng.uniform(80.0, 300.0))
        den = np.convolve(_resonator(f1, bws[0], cfg.sample_rate),
                          _resonator(f2, bws[1], cfg.sample_rate))
        models.append(ClassModel(voiced, (f1, f2), bws, den))
    return models


def _excitation(model: ClassModel, n: int, cfg: CorpusConfig, rng: np.random.Generator):
    if not model.voiced:
        return rng.standard_normal(n)
    f0 = rng.uniform(*cfg.pitch_hz)
    period = cfg.sample_rate / f0
    e = np.zeros(n)
    pos = rng.uniform(0, period)
    while pos < n:
        e[int(pos)] = 1.0
        pos += period
    return e


def synth_segment(model: ClassModel, n: int, cfg: CorpusConfig, rng: np.random.Generator):
    seg = lfilter([1.0], model.denominator, _excitation(model, n, cfg, rng))
    rms = math.sqrt(float(np.mean(seg * seg))) or 1.0
    return seg / rms * rng.uniform(0.5, 1.0)


def label_track(seg_bounds: np.ndarray, seg_classes: np.ndarray, n_samples: int,
                fs: int, frame_cfg: FeatureConfig) -> np.ndarray:
    """Class of the segment containing each frame centre."""
    frame_len, hop = frame_cfg.frame_samples(fs)
    n = num_frames(n_samples, fs, frame_cfg)
    centres = np.arange(n) * hop + frame_len // 2
    seg = np.searchsorted(seg_bounds, centres, side="right") - 1
    return seg_classes[seg]


def gen_corpus(cfg: CorpusConfig) -> Corpus:
    """Clean corpus; bit-identical for a given config."""
    rng = np.random.default_rng(cfg.seed)
    classes = make_class_models(cfg, rng)
    fs = cfg.sample_rate
    n_samples = int(round(cfg.utterance_len_s * fs))
    utts = []
    for u in range(cfg.n_utterances):
        urng = np.random.default_rng([cfg.seed, u + 1])
        bounds, labels, pieces = [], [], []
        pos = 0
        while pos < n_samples:
            length = int(round(urng.uniform(*cfg.segment_len_ms) * fs / 1000.0))
            length = max(1, min(length, n_samples - pos))
            k = int(urng.integers(cfg.n_classes))
            bounds.append(pos)
            labels.append(k)
            pieces.append(synth_segment(classes[k], length, cfg, urng))
            pos += length
        x = np.concatenate(pieces)
        track = label_track(np.array(bounds), np.array(labels), n_samples, fs, cfg.frame_config)
        utts.append(Utterance(f"utt{u:04d}", Signal(x, fs), track))
    return Corpus(utts, Condition.CLEAN, cfg.frame_len_ms, cfg.hop_ms, classes)


def shift_labels(labels: np.ndarray, shift: int, n_frames: int) -> np.ndarray:
    """Delay a label track by ``shift`` frames and fit it to ``n_frames`` (edge replication)."""
    out = np.concatenate([np.full(shift, labels[0]), labels]) if shift else labels
    if out.shape[0] < n_frames:
        out = np.concatenate([out, np.full(n_frames - out.shape[0], out[-1])])
    return out[:n_frames].copy()


def contaminate(corpus: Corpus, irs: Sequence[ImpulseResponse], snr_db: float | None = None,
                noise_seed: int = 0, seed: int = 0) -> Corpus:
    """Convolve each utterance with an IR (seeded round-robin), optionally add noise.

    The output keeps ``len(x) + direct_path_index`` samples so the direct
    path of every clean sample is present; the label track is delayed by the
    direct-path delay rounded to frames.
    """
    if corpus.condition is not Condition.CLEAN:
        raise CorpusError(f"corpus is already contaminated ({corpus.condition.value})")
    if not irs:
        raise CorpusError("need at least one impulse response")
    order = np.random.default_rng(seed).permutation(len(irs))
    frame_cfg = corpus.frame_config
    utts = []
    for i, utt in enumerate(corpus.utterances):
        h = irs[order[i % len(irs)]]
        x = utt.signal
        y = ac.convolve(x, h)
        keep = len(x) + h.direct_path_index
        y = Signal(y.samples[:keep], x.sample_rate)
        if snr_db is not None:
            noise = np.random.default_rng([noise_seed, i]).standard_normal(len(y))
            y = ac.mix_noise_at_snr(y, Signal(noise, y.sample_rate), snr_db)
        _, hop = frame_cfg.frame_samples(x.sample_rate)
        shift = int(round(h.direct_path_index / hop))
        labels = shift_labels(utt.labels, shift, num_frames(len(y), y.sample_rate, frame_cfg))
        name = h.name or f"ir{int(order[i % len(irs)])}"
        utts.append(Utterance(utt.uid, y, labels, name, snr_db))
    condition = Condition.REV if snr_db is None else Condition.REV_NOISE
    return replace(corpus, utterances=utts, condition=condition)


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [f * n for f in fractions]
    sizes = [int(math.floor(q)) for q in quotas]
    rest = n - sum(sizes)
    by_remainder = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in by_remainder[:rest]:
        sizes[i] += 1
    return sizes


def split_corpus(corpus: Corpus, train_frac: float, dev_frac: float, test_frac: float,
                 seed: int = 0) -> tuple[Corpus, Corpus, Corpus]:
    fracs = (train_frac, dev_frac, test_frac)
    if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
        raise CorpusError("split fractions must be non-negative and sum to 1")
    if len(corpus) < 3:
        raise CorpusError("need at least three utterances to split")
    perm = np.random.default_rng(seed).permutation(len(corpus))
    sizes = largest_remainder(len(corpus), fracs)
    parts, start = [], 0
    for size in sizes:
        idx = sorted(perm[start:start + size].tolist())
        parts.append(replace(corpus, utterances=[corpus.utterances[i] for i in idx]))
        start += size
    return tuple(parts)


# --- persistence -----------------------------------------------------------

MANIFEST = "manifest.txt"


def save_corpus(corpus: Corpus, directory) -> Path:
    """One float WAV and one label file per utterance plus a tab-separated manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"# condition={corpus.condition.value} frame_len_ms={corpus.frame_len_ms} "
             f"hop_ms={corpus.hop_ms}",
             "uid\twav\tlabels\tcondition\tir\tsnr"]
    for u in corpus.utterances:
        wav, lab = f"{u.uid}.wav", f"{u.uid}.cwl"
        ac.write_wav(directory / wav, u.signal)
        write_labels(directory / lab, u.labels)
        snr = "" if u.snr_db is None else repr(float(u.snr_db))
        lines.append("\t".join([u.uid, wav, lab, corpus.condition.value, u.ir, snr]))
    path = directory / MANIFEST
    path.write_text("\n".join(lines) + "\n")
    return path


def load_corpus(directory) -> Corpus:
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.exists():
        raise FileNotFoundError(path)
    head, _, *rows = path.read_text().splitlines()
    meta = dict(tok.split("=", 1) for tok in head.lstrip("# ").split())
    utts = []
    for row in rows:
        uid, wav, lab, _cond, ir, snr = row.split("\t")
        utts.append(Utterance(uid, ac.read_wav(directory / wav), read_labels(directory / lab),
                              ir, float(snr) if snr else None))
    return Corpus(utts, Condition(meta["condition"]), float(meta["frame_len_ms"]),
                  float(meta["hop_ms"]))
