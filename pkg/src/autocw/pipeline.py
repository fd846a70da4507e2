"""On-disk pipeline stages behind the command line.

Every stage writes its artifacts atomically and finishes by writing a
stamp file that records a digest of its inputs (config values it reads,
derived seed, input files) and the sha256 of each output. Rerunning a
stage whose stamp matches is a no-op; a stamp whose input digest no longer
matches raises :class:`StaleArtifact` unless ``force`` is set.

Layout under the output root::

    source/{train,dev}/           gen
    <cond>/irs/{train,dev}/       ir
    <cond>/corpus/{train,dev}/    contaminate
    <cond>/features/{train,dev}/  features
    <cond>/probe_model.cwm        train
    <cond>/profile.csv            probe
    <cond>/composed.csv           compose
    <cond>/autocw.csv, scw.csv    autocw
    <cond>/grid.csv               grid
    <cond>/xcorr.csv, pearson.csv xcorr
    report/                       report
"""
from __future__ import annotations

import contextlib
import csv
import datetime
import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

from . import acoustics as ac
from .compose import (SearchConfig, autocw_search, compose_window, grid_search, symmetric_search,
                      write_result_csv)
from .config import ExperimentConfig
from .experiment import TaskConfig, featurize, make_irs
from .features import (ContextWindowSpec, FrameMatrix, NormStats, apply_normalizer, assemble_dataset,
                       extract_features, fit_normalizer, pearson_lag_profile, read_frame_matrix, read_labels, rho_cw,
                       write_frame_matrix, write_labels)
from .nn import MlpConfig, init_model, load_model, save_model, train_sgd, write_report_csv
from .probe import gradient_profile, read_profile_csv, write_profile_csv
from .synthdata import Condition, contaminate, gen_corpus, load_corpus, save_corpus, split_corpus

STAGES = ("gen", "ir", "contaminate", "features", "train", "probe", "compose",
          "autocw", "grid", "xcorr", "report")
SPLITS = ("train", "dev")


class MissingInput(FileNotFoundError):
    pass


class StaleArtifact(RuntimeError):
    pass


class UnknownCondition(LookupError):
    pass


def derive_seed(seed: int, *names) -> int:
    """Stage-level seed: hash of the global seed and the stage/condition names."""
    text = "/".join([str(seed), *map(str, names)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _tree_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    return sorted(p for p in path.rglob("*") if p.is_file() and not p.name.startswith("."))


# --- atomic writes ------------------------------------------------------------

@contextlib.contextmanager
def atomic_file(path: Path):
    """Yield a temp path next to ``path``; rename over it on success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


@contextlib.contextmanager
def atomic_dir(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        yield tmp
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


# --- conditions ----------------------------------------------------------------

@dataclass(frozen=True)
class ConditionSpec:
    t60: float
    snr_db: float | None

    @property
    def name(self) -> str:
        if self.t60 == 0 and self.snr_db is None:
            return "clean"
        name = f"t60_{int(round(self.t60 * 1000))}ms"
        if self.snr_db is not None:
            name += f"_snr{self.snr_db:g}dB"
        return name

    @property
    def kind(self) -> Condition:
        if self.snr_db is not None:
            return Condition.REV_NOISE
        return Condition.CLEAN if self.t60 == 0 else Condition.REV


def conditions(cfg: ExperimentConfig) -> list[ConditionSpec]:
    return [ConditionSpec(t, cfg.acoustics.snr_db) for t in cfg.acoustics.t60_sweep]


def task_config(cfg: ExperimentConfig, cond: ConditionSpec) -> TaskConfig:
    a = cfg.acoustics
    return TaskConfig(cfg.corpus, cfg.features, cond.t60, a.ir_kind, a.n_irs, a.tail_gain,
                      cond.snr_db, cfg.run.dev_fraction, a.room)


# --- runner -----------------------------------------------------------------------

class Runner:
    """Executes stages against one output root."""

    def __init__(self, cfg: ExperimentConfig, out, force: bool = False, log=print):
        self.cfg = cfg
        self.out = Path(out)
        self.force = force
        self.say = log
        self.seed = cfg.run.seed

    # bookkeeping
    def _stamp_path(self, stage: str, cond: str | None) -> Path:
        base = self.out / (cond or "")
        return base / f".{stage}.stamp"

    def _require(self, *paths: Path) -> list[Path]:
        missing = [p for p in paths if not p.exists()]
        if missing:
            rel = ", ".join(str(p.relative_to(self.out)) for p in missing)
            raise MissingInput(f"missing inputs: {rel}")
        return list(paths)

    def _input_digest(self, params: dict, inputs: list[Path]) -> str:
        h = hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode())
        for p in inputs:
            for f in _tree_files(p):
                h.update(str(f.relative_to(self.out)).encode())
                h.update(file_digest(f).encode())
        return h.hexdigest()

    def _run(self, stage: str, cond: str | None, params: dict, inputs: list[Path],
             outputs: list[Path], body) -> bool:
        """Run ``body`` unless the stamp says the outputs are current. Returns True if run."""
        digest = self._input_digest(params, inputs)
        stamp_path = self._stamp_path(stage, cond)
        if stamp_path.exists():
            stamp = json.loads(stamp_path.read_text())
            if stamp["inputs"] != digest and not self.force:
                raise StaleArtifact(f"{stage} [{cond or '-'}]: inputs changed since the last run; "
                                    "rerun with --force to rebuild")
            if stamp["inputs"] == digest and not self.force and self._outputs_intact(stamp):
                self.say(f"{stage} [{cond or '-'}]: up to date")
                return False
        body()
        record = {}
        for p in outputs:
            for f in _tree_files(p):
                record[str(f.relative_to(self.out))] = file_digest(f)
        stamp = {"stage": stage, "condition": cond, "inputs": digest, "outputs": record}
        with atomic_file(stamp_path) as tmp:
            tmp.write_text(json.dumps(stamp, indent=1, sort_keys=True) + "\n")
        self._log(stage, cond, digest, record)
        self.say(f"{stage} [{cond or '-'}]: wrote {len(record)} file(s)")
        return True

    def _outputs_intact(self, stamp: dict) -> bool:
        for rel, d in stamp["outputs"].items():
            p = self.out / rel
            if not p.exists() or file_digest(p) != d:
                return False
        return True

    def _log(self, stage, cond, digest, record):
        now = datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        cfg_digest = self.cfg.digest()
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / "run.log", "a") as fh:
            for rel, d in record.items():
                fh.write(f"{now} stage={stage} condition={cond or '-'} artifact={rel} sha256={d} "
                         f"inputs={digest} config={cfg_digest}\n")

    def _conds(self, only: str | None = None) -> list[ConditionSpec]:
        conds = conditions(self.cfg)
        if only is not None:
            conds = [c for c in conds if c.name == only]
            if not conds:
                raise UnknownCondition(f"condition {only!r} is not configured "
                                       f"(have: {', '.join(c.name for c in conditions(self.cfg))})")
        return conds

    def search_config(self) -> SearchConfig:
        s = self.cfg.search
        return SearchConfig(cw_min=s.cw_min, cw_max=s.cw_max, hidden_dims=self.cfg.nn.hidden_dims,
                            n_classes=self.cfg.corpus.n_classes, train=self.cfg.train,
                            probe_batch_size=s.probe_batch_size, probe_mode=s.probe_mode,
                            seed=derive_seed(self.seed, "search"), max_side=s.max_side,
                            jobs=self.cfg.run.jobs)

    # stages
    def run_stage(self, stage: str, condition: str | None = None) -> None:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        if stage == "gen":
            self.gen()
        elif stage == "report":
            self.report()
        else:
            for cond in self._conds(condition):
                getattr(self, stage)(cond)

    def gen(self):
        out = self.out / "source"
        seed = derive_seed(self.seed, "gen")
        params = {"corpus": self.cfg.digest("corpus"), "seed": seed,
                  "dev_fraction": self.cfg.run.dev_fraction}

        def body():
            clean = gen_corpus(replace(self.cfg.corpus, seed=seed))
            f = self.cfg.run.dev_fraction
            parts = split_corpus(clean, 1 - f, f, 0.0, seed)
            with atomic_dir(out) as tmp:
                for name, part in zip(SPLITS, parts):
                    save_corpus(part, tmp / name)

        self._run("gen", None, params, [], [out], body)

    def ir(self, cond: ConditionSpec):
        out = self.out / cond.name / "irs"
        seed = derive_seed(self.seed, "ir", cond.name)
        a = self.cfg.acoustics
        params = {"t60": cond.t60, "kind": a.ir_kind, "n": a.n_irs, "tail": a.tail_gain,
                  "room": a.room, "fs": self.cfg.corpus.sample_rate, "seed": seed}

        def body():
            task = task_config(self.cfg, cond)
            with atomic_dir(out) as tmp:
                for side, name in enumerate(SPLITS):
                    (tmp / name).mkdir()
                    for i, h in enumerate(make_irs(task, seed, side)):
                        if h.t60_estimate is None:
                            h = h.with_t60()
                        ac.write_ir(tmp / name / f"{i:02d}_{h.name}.wav", h)

        self._run("ir", cond.name, params, [], [out], body)

    def contaminate(self, cond: ConditionSpec):
        clean = self.out / "source"
        irs = self.out / cond.name / "irs"
        self._require(clean / "train" / "manifest.txt", irs)
        out = self.out / cond.name / "corpus"
        seed = derive_seed(self.seed, "contaminate", cond.name)
        params = {"snr_db": cond.snr_db, "seed": seed}

        def body():
            with atomic_dir(out) as tmp:
                for side, name in enumerate(SPLITS):
                    corpus = load_corpus(clean / name)
                    hs = [ac.read_ir(p) for p in sorted((irs / name).glob("*.wav"))]
                    rev = contaminate(corpus, hs, cond.snr_db, noise_seed=seed + side, seed=seed + side)
                    if cond.kind is Condition.CLEAN:
                        rev = replace(rev, condition=Condition.CLEAN)
                    save_corpus(rev, tmp / name)

        self._run("contaminate", cond.name, params, [clean, irs], [out], body)

    def features(self, cond: ConditionSpec):
        src = self.out / cond.name / "corpus"
        self._require(src / "train" / "manifest.txt", src / "dev" / "manifest.txt")
        out = self.out / cond.name / "features"
        params = {"features": self.cfg.digest("features")}

        def body():
            mats = {name: featurize(load_corpus(src / name), self.cfg.features) for name in SPLITS}
            uids = {name: [u.uid for u in load_corpus(src / name).utterances] for name in SPLITS}
            stats = fit_normalizer(mats["train"])
            with atomic_dir(out) as tmp:
                for name in SPLITS:
                    (tmp / name).mkdir()
                    for uid, m in zip(uids[name], mats[name]):
                        m = apply_normalizer(m, stats)
                        write_frame_matrix(tmp / name / f"{uid}.cwf", m)
                        write_labels(tmp / name / f"{uid}.cwl", m.labels)
                    (tmp / name / "index.txt").write_text("\n".join(uids[name]) + "\n")
                write_norm_stats(tmp / "norm.csv", stats)

        self._run("features", cond.name, params, [src], [out], body)

    def load_features(self, cond: ConditionSpec, split: str) -> list[FrameMatrix]:
        d = self.out / cond.name / "features" / split
        self._require(d / "index.txt")
        return load_feature_dir(d)

    def _search_params(self) -> dict:
        return {k: self.cfg.digest(k) for k in ("nn", "train", "search")} | {
            "seed": derive_seed(self.seed, "search"), "n_classes": self.cfg.corpus.n_classes}

    def train(self, cond: ConditionSpec):
        feats = self._require(self.out / cond.name / "features")
        base = self.out / cond.name
        model_path, report_path = base / "probe_model.cwm", base / "probe_train.csv"
        seed = derive_seed(self.seed, "search")
        params = self._search_params()

        def body():
            sc = self.search_config()
            spec = sc.probe_spec
            x, y = assemble_dataset(self.load_features(cond, "train"), spec)
            model = init_model(MlpConfig(x.shape[1], sc.hidden_dims, sc.n_classes, seed))
            tcfg = replace(sc.train, seed=seed, max_epochs=self.cfg.search.probe_epochs)
            model, report = train_sgd(model, (x, y), tcfg)
            with atomic_file(model_path) as tmp:
                save_model(tmp, model)
            with atomic_file(report_path) as tmp:
                write_report_csv(tmp, report)

        self._run("train", cond.name, params, feats, [model_path, report_path], body)

    def probe(self, cond: ConditionSpec):
        base = self.out / cond.name
        inputs = self._require(base / "probe_model.cwm", base / "features")
        out = base / "profile.csv"
        params = {"search": self.cfg.digest("search")}

        def body():
            sc = self.search_config()
            model = load_model(base / "probe_model.cwm")
            data = assemble_dataset(self.load_features(cond, "train"), sc.probe_spec)
            prof = gradient_profile(model, data, sc.probe_spec, sc.probe_batch_size, mode=sc.probe_mode)
            with atomic_file(out) as tmp:
                write_profile_csv(tmp, prof)

        self._run("probe", cond.name, params, inputs, [out], body)

    def compose(self, cond: ConditionSpec):
        base = self.out / cond.name
        inputs = self._require(base / "profile.csv")
        out = base / "composed.csv"
        s = self.cfg.search
        params = {"cw_min": s.cw_min, "cw_max": s.cw_max}

        def body():
            prof = read_profile_csv(base / "profile.csv")
            with atomic_file(out) as tmp, open(tmp, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["cw_len", "n_past", "n_future", "rho_cw"])
                for n in range(s.cw_min, s.cw_max + 1):
                    spec = compose_window(prof, n)
                    w.writerow([n, spec.n_past, spec.n_future, _fmt_rho(spec)])

        self._run("compose", cond.name, params, inputs, [out], body)

    def autocw(self, cond: ConditionSpec):
        base = self.out / cond.name
        inputs = self._require(base / "features")
        outs = [base / "autocw.csv", base / "autocw_profile.csv"]
        if self.cfg.search.baseline:
            outs.append(base / "scw.csv")
        params = self._search_params() | {"timings": self.cfg.run.timings}

        def body():
            sc = self.search_config()
            tr, dv = self.load_features(cond, "train"), self.load_features(cond, "dev")
            result = autocw_search(tr, dv, sc)
            self.say(f"autocw [{cond.name}]: {result.summary()}")
            with atomic_file(outs[0]) as tmp:
                write_result_csv(tmp, result, self.cfg.run.timings)
            with atomic_file(outs[1]) as tmp:
                write_profile_csv(tmp, result.profile)
            if self.cfg.search.baseline:
                with atomic_file(outs[2]) as tmp:
                    write_result_csv(tmp, symmetric_search(tr, dv, sc), self.cfg.run.timings)

        self._run("autocw", cond.name, params, inputs, outs, body)

    def grid(self, cond: ConditionSpec):
        base = self.out / cond.name
        inputs = self._require(base / "features")
        out = base / "grid.csv"
        params = self._search_params() | {"timings": self.cfg.run.timings}

        def body():
            lo, hi = self.cfg.search.grid_range
            sc = replace(self.search_config(), cw_min=lo, cw_max=hi)
            result = grid_search(self.load_features(cond, "train"), self.load_features(cond, "dev"), sc)
            self.say(f"grid [{cond.name}]: {result.summary()}")
            with atomic_file(out) as tmp:
                write_result_csv(tmp, result, self.cfg.run.timings)

        self._run("grid", cond.name, params, inputs, [out], body)

    def xcorr(self, cond: ConditionSpec):
        clean_dir = self.out / "source" / "train"
        rev_dir = self.out / cond.name / "corpus" / "train"
        inputs = self._require(clean_dir / "manifest.txt", rev_dir / "manifest.txt")
        base = self.out / cond.name
        outs = [base / "xcorr.csv", base / "pearson.csv"]
        params = {"xcorr": self.cfg.digest("xcorr"), "features": self.cfg.digest("features")}

        def body():
            k = self.cfg.xcorr.max_utterances
            clean = load_corpus(clean_dir).utterances[:k]
            rev = load_corpus(rev_dir).utterances[:k]
            env = ac.avg_xcorr_envelope([u.signal for u in clean], [u.signal for u in rev],
                                        self.cfg.xcorr.window_ms, self.cfg.xcorr.hop_ms)
            with atomic_file(outs[0]) as tmp, open(tmp, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["lag", "lag_ms", "value"])
                for lag, v in zip(env.lags, env.values):
                    w.writerow([int(lag), f"{1000.0 * lag / env.sample_rate:.4f}", repr(float(v))])
            fx = [featurize_one(u, self.cfg) for u in clean]
            fy = [featurize_one(u, self.cfg) for u in rev]
            fy = [FrameMatrix(y.data[:x.n_frames]) for x, y in zip(fx, fy)]
            fx = [FrameMatrix(x.data) for x in fx]
            n = self.cfg.xcorr.pearson_lags
            prof = pearson_lag_profile(fx, fy, n, n)
            with atomic_file(outs[1]) as tmp, open(tmp, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["p", "coefficient"])
                for p, v in prof.items():
                    w.writerow([p, repr(float(v))])

        self._run("xcorr", cond.name, params, inputs, outs, body)

    def report(self):
        from .report import emit_report
        conds = conditions(self.cfg)
        needed = []
        for c in conds:
            base = self.out / c.name
            needed += [base / "profile.csv", base / "autocw.csv", base / "xcorr.csv", base / "pearson.csv"]
            if self.cfg.search.baseline:
                needed.append(base / "scw.csv")
            if self.cfg.search.run_grid:
                needed.append(base / "grid.csv")
        self._require(*needed)
        optional = [self.out / c.name / "grid.csv" for c in conds]
        inputs = needed + [p for p in optional if p.exists() and p not in needed]
        out = self.out / "report"
        params = {"conditions": [c.name for c in conds], "baseline": self.cfg.search.baseline}

        def body():
            with atomic_dir(out) as tmp:
                emit_report(self.out, conds, tmp)

        self._run("report", None, params, inputs, [out], body)


def featurize_one(utt, cfg: ExperimentConfig) -> FrameMatrix:
    fcfg = replace(cfg.features, frame_len_ms=cfg.corpus.frame_len_ms, hop_ms=cfg.corpus.hop_ms)
    return extract_features(utt.signal, fcfg, None)


def _fmt_rho(spec: ContextWindowSpec) -> str:
    return "" if spec.n_past + spec.n_future == 0 else f"{rho_cw(spec):.2f}"


def write_norm_stats(path, stats: NormStats) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "mean", "std"])
        for i, (m, s) in enumerate(zip(stats.mean, stats.std)):
            w.writerow([i, repr(float(m)), repr(float(s))])


def load_feature_dir(d: Path) -> list[FrameMatrix]:
    uids = (d / "index.txt").read_text().split()
    return [FrameMatrix(read_frame_matrix(d / f"{u}.cwf"), read_labels(d / f"{u}.cwl")) for u in uids]
