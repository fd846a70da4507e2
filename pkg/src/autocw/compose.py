"""Greedy context-window composition and the two window searches.

``autocw_search`` trains one probe network for a single epoch, reads the
per-offset gradient profile, and then trains one network per window length
(linear in the length range). ``grid_search`` trains every (N_p, N_f)
split of every length (quadratic) and serves as the oracle.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

from .features import ContextWindowSpec, FrameMatrix, assemble_dataset, rho_cw
from .nn import MlpConfig, TrainConfig, frame_error_rate, init_model, train_sgd
from .probe import GradientProfile, gradient_profile


@dataclass(frozen=True)
class SearchConfig:
    cw_min: int = 1
    cw_max: int = 25
    hidden_dims: tuple[int, ...] = (256, 256, 256, 256)
    n_classes: int | None = None
    train: TrainConfig = TrainConfig()
    probe_batch_size: int = 256
    probe_mode: str = "batch"
    seed: int = 0
    max_side: int | None = None
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.cw_min < 1:
            raise ValueError("cw_min must be >= 1")
        if self.cw_max < self.cw_min:
            raise ValueError("cw_max must be >= cw_min")
        if self.cw_max % 2 == 0:
            raise ValueError("cw_max must be odd so the probe window centres on p = 0")

    @property
    def probe_spec(self) -> ContextWindowSpec:
        return ContextWindowSpec.symmetric((self.cw_max - 1) // 2)


@dataclass
class SearchRecord:
    spec: ContextWindowSpec
    dev_fer: float
    train_epochs: int = 0
    train_seconds: float = field(default=0.0, compare=False)

    @property
    def cw_len(self) -> int:
        return self.spec.length


@dataclass
class SearchResult:
    records: list[SearchRecord]
    n_full_trainings: int
    n_probe_epochs: int = 0
    profile: GradientProfile | None = None

    @property
    def best(self) -> SearchRecord:
        if not self.records:
            raise ValueError("empty search result")
        return min(self.records, key=lambda r: (r.dev_fer, r.cw_len, -r.spec.n_past))

    def summary(self) -> str:
        b = self.best
        return f"best context window {b.spec} (length {b.cw_len}), dev FER {b.dev_fer:.2f}%"


def compose_window(profile: GradientProfile, cw_len: int) -> ContextWindowSpec:
    """Grow the window one frame at a time towards the larger gradient norm.

    Ties go to the future side. Once one side of the profile is exhausted
    the other side takes every remaining frame.
    """
    if not 1 <= cw_len <= profile.cw_max:
        raise ValueError(f"cw_len {cw_len} outside [1, {profile.cw_max}]")
    half = profile.half
    n_past = n_future = 0
    for _ in range(cw_len - 1):
        if n_past == half:
            n_future += 1
        elif n_future == half:
            n_past += 1
        elif profile.norm(-n_past - 1) > profile.norm(n_future + 1):
            n_past += 1
        else:
            n_future += 1
    return ContextWindowSpec(n_past, n_future)


def _n_classes(cfg: SearchConfig, *datasets) -> int:
    if cfg.n_classes is not None:
        return cfg.n_classes
    return 1 + max(int(m.labels.max()) for data in datasets for m in data)


def evaluate_window(train_data: Sequence[FrameMatrix], dev_data: Sequence[FrameMatrix],
                    spec: ContextWindowSpec, cfg: SearchConfig,
                    n_classes: int | None = None) -> SearchRecord:
    """Full training with ``spec`` and dev-set frame error rate."""
    t0 = time.perf_counter()
    n_classes = n_classes or _n_classes(cfg, train_data, dev_data)
    x, y = assemble_dataset(train_data, spec)
    model = init_model(MlpConfig(x.shape[1], cfg.hidden_dims, n_classes, cfg.seed))
    model, report = train_sgd(model, (x, y), replace(cfg.train, seed=cfg.seed))
    fer = frame_error_rate(model, assemble_dataset(dev_data, spec))
    return SearchRecord(spec, fer, report.epochs, time.perf_counter() - t0)


def _evaluate_all(train_data, dev_data, specs, cfg: SearchConfig) -> list[SearchRecord]:
    n_classes = _n_classes(cfg, train_data, dev_data)

    def run(spec):
        return evaluate_window(train_data, dev_data, spec, cfg, n_classes)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as pool:
            return list(pool.map(run, specs))
    return [run(s) for s in specs]


def probe_profile(train_data: Sequence[FrameMatrix], cfg: SearchConfig,
                  n_classes: int | None = None, epochs: int = 1) -> GradientProfile:
    """Train on the widest symmetric window for ``epochs`` epochs and probe it."""
    if not train_data:
        raise ValueError("empty training data")
    n_classes = n_classes or _n_classes(cfg, train_data)
    spec = cfg.probe_spec
    x, y = assemble_dataset(train_data, spec)
    model = init_model(MlpConfig(x.shape[1], cfg.hidden_dims, n_classes, cfg.seed))
    tcfg = replace(cfg.train, seed=cfg.seed, max_epochs=epochs)
    model, _ = train_sgd(model, (x, y), tcfg)
    return gradient_profile(model, (x, y), spec, cfg.probe_batch_size, mode=cfg.probe_mode)


def autocw_search(train_data: Sequence[FrameMatrix], dev_data: Sequence[FrameMatrix],
                  cfg: SearchConfig, profile: GradientProfile | None = None) -> SearchResult:
    """Probe once, then train one composed window per length in ``[cw_min, cw_max]``.

    A precomputed ``profile`` skips the probe (``n_probe_epochs`` is then 0).
    """
    if not train_data or not dev_data:
        raise ValueError("empty train or dev data")
    n_classes = _n_classes(cfg, train_data, dev_data)
    probe_epochs = 0
    if profile is None:
        profile = probe_profile(train_data, cfg, n_classes)
        probe_epochs = 1
    elif profile.cw_max != cfg.cw_max:
        raise ValueError("profile width does not match cw_max")
    specs = [compose_window(profile, n) for n in range(cfg.cw_min, cfg.cw_max + 1)]
    records = _evaluate_all(train_data, dev_data, specs, cfg)
    return SearchResult(records, len(specs), probe_epochs, profile)


def grid_candidates(cw_min: int, cw_max: int, max_side: int | None = None) -> list[ContextWindowSpec]:
    """Every split of every length, ordered by length then decreasing N_p."""
    out = []
    for n in range(cw_min, cw_max + 1):
        for n_past in range(n - 1, -1, -1):
            n_future = n - 1 - n_past
            if max_side is not None and max(n_past, n_future) > max_side:
                continue
            out.append(ContextWindowSpec(n_past, n_future))
    return out


def grid_search(train_data: Sequence[FrameMatrix], dev_data: Sequence[FrameMatrix],
                cfg: SearchConfig) -> SearchResult:
    if not train_data or not dev_data:
        raise ValueError("empty train or dev data")
    specs = grid_candidates(cfg.cw_min, cfg.cw_max, cfg.max_side)
    records = _evaluate_all(train_data, dev_data, specs, cfg)
    return SearchResult(records, len(specs), 0)


def symmetric_search(train_data, dev_data, cfg: SearchConfig) -> SearchResult:
    """Symmetric windows only, one per odd length in range."""
    specs = [ContextWindowSpec.symmetric((n - 1) // 2)
             for n in range(cfg.cw_min, cfg.cw_max + 1) if n % 2]
    records = _evaluate_all(train_data, dev_data, specs, cfg)
    return SearchResult(records, len(specs), 0)


def best_per_length(result: SearchResult) -> dict[int, SearchRecord]:
    out: dict[int, SearchRecord] = {}
    for r in result.records:
        cur = out.get(r.cw_len)
        if cur is None or (r.dev_fer, -r.spec.n_past) < (cur.dev_fer, -cur.spec.n_past):
            out[r.cw_len] = r
    return dict(sorted(out.items()))


def _fmt_rho(spec: ContextWindowSpec) -> str:
    if spec.n_past + spec.n_future == 0:
        return ""
    return f"{rho_cw(spec):.2f}"


def write_result_csv(path, result: SearchResult, timings: bool = False) -> None:
    header = ["cw_len", "n_past", "n_future", "rho_cw", "dev_fer", "train_epochs"]
    if timings:
        header.append("train_seconds")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in result.records:
            row = [r.cw_len, r.spec.n_past, r.spec.n_future, _fmt_rho(r.spec),
                   f"{r.dev_fer:.4f}", r.train_epochs]
            if timings:
                row.append(f"{r.train_seconds:.3f}")
            w.writerow(row)


def read_result_csv(path) -> list[SearchRecord]:
    with open(path, newline="") as fh:
        return [SearchRecord(ContextWindowSpec(int(r["n_past"]), int(r["n_future"])),
                             float(r["dev_fer"]), int(r["train_epochs"]))
                for r in csv.DictReader(fh)]
