"""Acceptance criteria AC1-AC10, each at its stated tolerance and runtime budget.

Every test records a single PASS/FAIL line (shown in the terminal summary)
before asserting.
"""
import csv
import functools
import time
from dataclasses import replace

import numpy as np
import pytest

from autocw import acoustics as ac
from autocw import cli, compose, nn
from autocw.acoustics import Signal
from autocw.compose import SearchConfig, autocw_search, compose_window, grid_candidates, grid_search
from autocw.experiment import TaskConfig, build_task
from autocw.features import ContextWindowSpec, FrameMatrix, rho_cw
from autocw.nn import MlpConfig, TrainConfig
from autocw.probe import GradientProfile
from autocw.synthdata import CorpusConfig, contaminate, gen_corpus

pytestmark = pytest.mark.slow

DESK_TRAIN = TrainConfig(batch_size=32, max_epochs=15)


def desk_search(seed, cw_min=3, cw_max=11):
    return SearchConfig(cw_min=cw_min, cw_max=cw_max, hidden_dims=(128, 128), n_classes=10,
                        train=DESK_TRAIN, probe_batch_size=128, seed=seed)


@functools.lru_cache(maxsize=None)
def task(t60, seed):
    return build_task(TaskConfig(t60=t60), seed)


# --- AC1 ------------------------------------------------------------------------

def test_ac1_correlation_convolution_identity(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n, m = int(rng.integers(2, 129)), int(rng.integers(1, 65))
        x, h = rng.standard_normal(n), rng.standard_normal(m)
        y = ac.convolve(Signal(x, 16000), Signal(h, 16000))
        lhs = ac.xcorr(Signal(x, 16000), y, n - 1).values
        rxx = np.correlate(x, x, mode="full")          # lags -(n-1)..(n-1)
        rhs = np.convolve(h, rxx)[:2 * n - 1]
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 5
    acceptance("AC1", ok, f"max relative error {worst:.2e} (<= 1e-9), {elapsed:.2f} s (< 5 s)")
    assert ok


# --- AC2 ------------------------------------------------------------------------

def _rel(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def _fd(f, arr, eps=1e-6):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + eps
        up = f()
        arr[idx] = old - eps
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def test_ac2_gradient_oracle(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    worst = 0.0
    for k in range(20):
        d_in = int(rng.integers(2, 7))
        hidden = tuple(int(h) for h in rng.integers(2, 7, size=int(rng.integers(1, 4))))
        n_cls = int(rng.integers(2, 5))
        model = nn.init_model(MlpConfig(d_in, hidden, n_cls, seed=k))
        for b in model.biases:
            b[:] = rng.normal(scale=0.2, size=b.shape)
        x = rng.standard_normal((int(rng.integers(1, 6)), d_in))
        y = rng.integers(0, n_cls, x.shape[0])
        loss = lambda: nn.cross_entropy(model, x, y)  # noqa: E731
        grads, dx = nn.backward(model, x, y)
        for (dw, db), w, b in zip(grads, model.weights, model.biases):
            worst = max(worst, _rel(dw, _fd(loss, w)), _rel(db, _fd(loss, b)))
        worst = max(worst, _rel(dx, _fd(loss, x)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30
    acceptance("AC2", ok, f"max relative gradient error {worst:.2e} (<= 1e-4) over 20 models, {elapsed:.1f} s")
    assert ok


# --- AC3 ------------------------------------------------------------------------

def test_ac3_complexity_counters(acceptance, monkeypatch):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    y = np.repeat(rng.integers(0, 3, 20), 5)
    x = rng.standard_normal((100, 2)) + y[:, None]
    train = [FrameMatrix(x[:60], y[:60])]
    dev = [FrameMatrix(x[60:], y[60:])]
    cfg = SearchConfig(cw_min=11, cw_max=25, hidden_dims=(4,), train=TrainConfig(batch_size=8, max_epochs=1),
                       probe_batch_size=32)

    calls = []
    real = compose.train_sgd

    def counting(model, data, tcfg):
        out = real(model, data, tcfg)
        calls.append((data[0].shape[1], out[1].epochs))
        return out

    monkeypatch.setattr(compose, "train_sgd", counting)
    auto = autocw_search(train, dev, cfg)
    probe_calls = [c for c in calls if c[0] == 25 * 2][:1]
    auto_trainings = len(calls) - 1
    probe_epochs = probe_calls[0][1] if probe_calls else 0
    calls.clear()
    grid = grid_search(train, dev, cfg)
    elapsed = time.perf_counter() - t0
    ok = (auto_trainings == 15 and auto.n_full_trainings == 15 and auto.n_probe_epochs == 1
          and probe_epochs == 1 and len(calls) == 270 and grid.n_full_trainings == 270
          and len(grid_candidates(11, 25)) == 270 and elapsed < 120)
    acceptance("AC3", ok, f"AutoCW {auto_trainings} trainings + {probe_epochs} probe epoch, "
                          f"grid {len(calls)} trainings, {elapsed:.1f} s (< 120 s)")
    assert ok


# --- AC4 ------------------------------------------------------------------------

def test_ac4_correlation_asymmetry(acceptance):
    t0 = time.perf_counter()
    corpus = gen_corpus(CorpusConfig(n_classes=6, n_utterances=6, utterance_len_s=1.0, seed=11))
    clean = corpus.signals
    ratios = {}
    for t60 in (0.25, 0.5, 0.78, 1.0):
        h = ac.exp_decay_ir(t60, 16000, 1.2 * t60, seed=5, tail_gain=0.05)
        rev = contaminate(corpus, [h]).signals
        ratios[t60] = ac.side_energy_ratio(ac.avg_xcorr_envelope(clean, rev))
    ident = contaminate(corpus, [ac.identity_ir(16000)]).signals
    r_id = ac.side_energy_ratio(ac.avg_xcorr_envelope(clean, ident))
    seq = [ratios[t] for t in (0.25, 0.5, 0.78, 1.0)]
    elapsed = time.perf_counter() - t0
    ok = (ratios[0.78] > 1.2 and all(b > a for a, b in zip(seq, seq[1:]))
          and abs(r_id - 1) <= 1e-6 and elapsed < 60)
    acceptance("AC4", ok, "ratios " + ", ".join(f"{t}:{r:.3f}" for t, r in ratios.items())
               + f"; identity {r_id:.8f}; {elapsed:.1f} s (< 60 s)")
    assert ok


# --- AC5 ------------------------------------------------------------------------

def test_ac5_gradient_profile_asymmetry(acceptance):
    t0 = time.perf_counter()
    clean, rev = [], []
    for seed in range(5):
        cfg = desk_search(seed)
        clean.append(compose.probe_profile(task(0.0, seed)[0], cfg, epochs=1).past_future_ratio())
        rev.append(compose.probe_profile(task(0.78, seed)[0], cfg, epochs=1).past_future_ratio())
    elapsed = time.perf_counter() - t0
    mean_clean = float(np.mean(clean))
    ok = (0.7 <= mean_clean <= 1.4 and all(r > 1.2 for r in rev)
          and all(r > c for r, c in zip(rev, clean)) and elapsed < 600)
    acceptance("AC5", ok, f"clean mean {mean_clean:.3f} in [0.7, 1.4]; T60 0.78 per seed "
                          f"{[round(r, 3) for r in rev]} (need > 1.2 and > clean "
                          f"{[round(c, 3) for c in clean]}); {elapsed:.0f} s")
    assert ok


# --- AC6 ------------------------------------------------------------------------

def test_ac6_autocw_structure(acceptance):
    t0 = time.perf_counter()
    sweep = (0.0, 0.25, 0.5, 0.78, 1.0)
    chosen = {t: [] for t in sweep}
    for seed in range(3):
        for t60 in sweep:
            tr, dv = task(t60, seed)
            chosen[t60].append(autocw_search(tr, dv, desk_search(seed)).best.spec)
    mean_np = {t: np.mean([s.n_past for s in v]) for t, v in chosen.items()}
    mean_nf = {t: np.mean([s.n_future for s in v]) for t, v in chosen.items()}
    mean_rho = {t: float(np.mean([rho_cw(s) for s in v])) for t, v in chosen.items()}
    rho_seq = [mean_rho[t] for t in (0.0, 0.25, 0.5, 1.0)]
    elapsed = time.perf_counter() - t0
    clean_ok = abs(mean_np[0.0] - mean_nf[0.0]) <= 1
    rev_ok = all(mean_np[t] - mean_nf[t] >= 2 for t in (0.78, 1.0))
    trend_ok = all(b >= a - 5.0 for a, b in zip(rho_seq, rho_seq[1:]))
    ok = clean_ok and rev_ok and trend_ok and elapsed < 1800
    windows = "; ".join(f"{t}: {' '.join(str(s) for s in v)}" for t, v in chosen.items())
    acceptance("AC6", ok, f"clean |Np-Nf| ok={clean_ok}, T60>=0.75 Np-Nf>=2 ok={rev_ok}, "
                          f"rho trend ok={trend_ok} {[round(r, 1) for r in rho_seq]}; windows {windows}; "
                          f"{elapsed:.0f} s")
    assert ok


# --- AC7 ------------------------------------------------------------------------

def test_ac7_autocw_not_worse_than_symmetric(acceptance):
    t0 = time.perf_counter()
    acw, scw, pairs = [], [], []
    for seed in range(5):
        tr, dv = task(0.78, seed)
        cfg = desk_search(seed)
        result = autocw_search(tr, dv, cfg)
        # symmetric windows exist only for odd lengths
        best = min((r for r in result.records if r.cw_len % 2),
                   key=lambda r: (r.dev_fer, r.cw_len, -r.spec.n_past))
        sym = ContextWindowSpec.symmetric((best.cw_len - 1) // 2)
        sym_fer = best.dev_fer if best.spec == sym else compose.evaluate_window(tr, dv, sym, cfg).dev_fer
        acw.append(best.dev_fer)
        scw.append(sym_fer)
        pairs.append(f"{best.spec}={best.dev_fer:.2f}/{sym}={sym_fer:.2f}")
    elapsed = time.perf_counter() - t0
    ok = np.mean(acw) <= np.mean(scw) and elapsed < 1200
    acceptance("AC7", ok, f"mean FER AutoCW {np.mean(acw):.2f} vs SCW {np.mean(scw):.2f} over 5 seeds "
                          f"({', '.join(pairs)}); {elapsed:.0f} s")
    assert ok


# --- AC8 ------------------------------------------------------------------------

def test_ac8_autocw_close_to_grid(acceptance):
    t0 = time.perf_counter()
    gaps = []
    for seed in range(3):
        tr, dv = task(0.78, seed)
        cfg = desk_search(seed, cw_min=1, cw_max=13)
        prof = compose.probe_profile(tr, cfg)
        grid = grid_search(tr, dv, cfg)
        # trainings are deterministic per window, so AutoCW's candidates are read off the grid
        by_spec = {r.spec: r.dev_fer for r in grid.records}
        auto_best = min(by_spec[compose_window(prof, n)] for n in range(1, 14))
        gaps.append(auto_best - grid.best.dev_fer)
    elapsed = time.perf_counter() - t0
    ok = np.mean(gaps) <= 1.0 and elapsed < 2700
    acceptance("AC8", ok, f"mean FER gap AutoCW - grid {np.mean(gaps):.3f} (<= 1.0), per seed "
                          f"{[round(g, 2) for g in gaps]}; {elapsed:.0f} s")
    assert ok


# --- AC9 ------------------------------------------------------------------------

def test_ac9_greedy_optimal_on_monotone_profiles(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    bad = checked = 0
    for _ in range(1000):
        half = int(rng.integers(1, 7))  # cw_max <= 13
        past = 100 - np.cumsum(rng.exponential(size=half) * (rng.random(half) < 0.8))
        fut = 100 - np.cumsum(rng.exponential(size=half) * (rng.random(half) < 0.8))
        prof = GradientProfile(2 * half + 1, np.concatenate([past[::-1], [100.0], fut]), 1)
        for n in range(1, prof.cw_max + 1):
            s = compose_window(prof, n)
            got = sum(prof.norm(p) for p in range(-s.n_past, s.n_future + 1))
            best = max(sum(prof.norm(p) for p in range(-a, n - a))
                       for a in range(n) if a <= half and n - 1 - a <= half)
            checked += 1
            bad += not np.isclose(got, best, rtol=1e-12, atol=0)
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 10
    acceptance("AC9", ok, f"{bad} mismatches over {checked} (profile, length) cases from 1000 profiles, "
                          f"{elapsed:.2f} s (< 10 s)")
    assert ok


# --- AC10 -----------------------------------------------------------------------

AC10_CONFIG = """\
[corpus]
n_classes = 4
n_utterances = 12
utterance_len_s = 1.0

[acoustics]
t60_sweep = 0.0, 0.78

[nn]
hidden_dims = 32

[train]
max_epochs = 3

[search]
cw_min = 1
cw_max = 5
run_grid = true
"""


def test_ac10_determinism(acceptance, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(AC10_CONFIG)
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [cli.main(["all", "--config", str(cfg), "--out", str(o), "-q"]) for o in outs]
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    same = [(outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files]
    other = sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*.csv"))
    rows = 0
    for f in files:
        with open(outs[0] / f, newline="") as fh:
            rows += sum(1 for _ in csv.reader(fh))
    ok = codes == [0, 0] and files == other and len(files) > 10 and all(same)
    acceptance("AC10", ok, f"{sum(same)}/{len(files)} CSVs byte-identical across two runs ({rows} rows)")
    assert ok
