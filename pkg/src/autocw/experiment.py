"""Desk-scale frame-classification tasks shared by the CLI, scripts and tests.

A task is a toy corpus split into train and dev utterances, contaminated
with disjoint IR sets (train IRs never reach the dev side), turned into
normalised feature matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import acoustics as ac
from .features import FeatureConfig, FeatureKind, FrameMatrix, apply_normalizer, extract_features, fit_normalizer
from .synthdata import Corpus, CorpusConfig, contaminate, gen_corpus, split_corpus


def default_corpus() -> CorpusConfig:
    return CorpusConfig(n_classes=10, n_utterances=60, segment_len_ms=(20.0, 60.0))


def default_features() -> FeatureConfig:
    return FeatureConfig(feature_kind=FeatureKind.FBANK, delta_order=0)


@dataclass(frozen=True)
class TaskConfig:
    corpus: CorpusConfig = field(default_factory=default_corpus)
    features: FeatureConfig = field(default_factory=default_features)
    t60: float = 0.0
    ir_kind: str = "exp"          # "exp" or "image"
    n_irs: int = 3                # per side
    tail_gain: float = 0.05
    snr_db: float | None = None
    dev_fraction: float = 0.3
    room: tuple[float, float, float] = (6.0, 5.0, 3.0)

    def __post_init__(self):
        if self.t60 < 0:
            raise ValueError("t60 must be non-negative")
        if self.ir_kind not in ("exp", "image"):
            raise ValueError(f"unknown ir_kind {self.ir_kind!r}")
        if not 0 < self.dev_fraction < 1:
            raise ValueError("dev_fraction must lie in (0, 1)")


def make_irs(cfg: TaskConfig, seed: int, side: int) -> list[ac.ImpulseResponse]:
    """IR set for one side of the split (0 = train, 1 = dev); identity when t60 = 0."""
    fs = cfg.corpus.sample_rate
    if cfg.t60 == 0:
        return [ac.identity_ir(fs, "identity")]
    irs = []
    for i in range(cfg.n_irs):
        tag = f"{'td'[side]}{i}"
        if cfg.ir_kind == "exp":
            irs.append(ac.exp_decay_ir(cfg.t60, fs, 1.2 * cfg.t60, seed * 1000 + side * 100 + i,
                                       tail_gain=cfg.tail_gain, name=f"exp{tag}"))
        else:
            irs.append(ac.calibrated_image_ir(_room_for(cfg, seed, side, i), name=f"img{tag}"))
    return irs


def _room_for(cfg: TaskConfig, seed: int, side: int, i: int) -> ac.RoomSpec:
    rng = np.random.default_rng([seed, side, i])
    dims = np.asarray(cfg.room, dtype=float)
    src = rng.uniform(0.2, 0.8, 3) * dims
    mic = rng.uniform(0.2, 0.8, 3) * dims
    return ac.RoomSpec(tuple(dims), tuple(src), tuple(mic), target_t60=cfg.t60,
                       max_reflection_order=None, sample_rate=cfg.corpus.sample_rate,
                       length_s=1.2 * cfg.t60)


def task_corpora(cfg: TaskConfig, seed: int) -> tuple[Corpus, Corpus]:
    clean = gen_corpus(replace(cfg.corpus, seed=seed))
    train, dev, _ = split_corpus(clean, 1 - cfg.dev_fraction, cfg.dev_fraction, 0.0, seed)
    if cfg.t60 == 0 and cfg.snr_db is None:
        return train, dev
    out = []
    for side, part in enumerate((train, dev)):
        out.append(contaminate(part, make_irs(cfg, seed, side), cfg.snr_db,
                               noise_seed=seed * 10 + side, seed=seed + side))
    return out[0], out[1]


def featurize(corpus: Corpus, fcfg: FeatureConfig) -> list[FrameMatrix]:
    fcfg = replace(fcfg, frame_len_ms=corpus.frame_len_ms, hop_ms=corpus.hop_ms)
    return [extract_features(u.signal, fcfg, u.labels) for u in corpus.utterances]


def build_task(cfg: TaskConfig, seed: int) -> tuple[list[FrameMatrix], list[FrameMatrix]]:
    """Normalised (train, dev) feature matrices; statistics come from train only."""
    train, dev = task_corpora(cfg, seed)
    ftr, fdv = featurize(train, cfg.features), featurize(dev, cfg.features)
    stats = fit_normalizer(ftr)
    return [apply_normalizer(m, stats) for m in ftr], [apply_normalizer(m, stats) for m in fdv]
