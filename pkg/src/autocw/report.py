"""Report bundle: one CSV per figure/table analogue plus a text summary."""
from __future__ import annotations

import csv
from pathlib import Path

from .acoustics import CorrelationSeries, side_energy_ratio
from .compose import SearchRecord, SearchResult, best_per_length, read_result_csv
from .features import ContextWindowSpec, rho_cw
from .probe import read_profile_csv
from .synthdata import Condition

REPORT_FILES = ("gradient_profiles.csv", "xcorr_envelope.csv", "pearson_profiles.csv",
                "fer_vs_cw.csv", "t60_sweep.csv", "summary.csv", "summary.txt")


def _rho(spec: ContextWindowSpec) -> str:
    return "" if spec.n_past + spec.n_future == 0 else f"{rho_cw(spec):.2f}"


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _best(path: Path) -> SearchRecord | None:
    if not path.exists():
        return None
    return SearchResult(read_result_csv(path), 0).best


def _writer(path: Path, header):
    fh = open(path, "w", newline="")
    w = csv.writer(fh)
    w.writerow(header)
    return fh, w


def emit_report(root, conds, dest) -> dict[str, str]:
    """Tabulate per-condition artifacts under ``root`` into ``dest``.

    ``conds`` are the configured conditions; all of their required
    artifacts must already exist. Returns the summary rows keyed by name.
    """
    root, dest = Path(root), Path(dest)
    dest.mkdir(parents=True, exist_ok=True)

    fh, w = _writer(dest / "gradient_profiles.csv", ["condition", "t60", "p", "norm"])
    with fh:
        for c in conds:
            prof = read_profile_csv(root / c.name / "profile.csv")
            for p, v in prof.as_dict().items():
                w.writerow([c.name, c.t60, p, repr(v)])

    ratios = {}
    fh, w = _writer(dest / "xcorr_envelope.csv", ["condition", "t60", "lag", "lag_ms", "value"])
    with fh:
        for c in conds:
            rows = _read_rows(root / c.name / "xcorr.csv")
            for r in rows:
                w.writerow([c.name, c.t60, r["lag"], r["lag_ms"], r["value"]])
            env = CorrelationSeries([float(r["value"]) for r in rows])
            ratios[c.name] = side_energy_ratio(env)

    fh, w = _writer(dest / "pearson_profiles.csv", ["condition", "t60", "p", "coefficient"])
    with fh:
        for c in conds:
            for r in _read_rows(root / c.name / "pearson.csv"):
                w.writerow([c.name, c.t60, r["p"], r["coefficient"]])

    fh, w = _writer(dest / "fer_vs_cw.csv",
                    ["condition", "t60", "method", "cw_len", "n_past", "n_future", "rho_cw", "dev_fer"])
    with fh:
        for c in conds:
            for method, fname in (("SCW", "scw.csv"), ("AutoCW", "autocw.csv"), ("grid", "grid.csv")):
                path = root / c.name / fname
                if not path.exists():
                    continue
                result = SearchResult(read_result_csv(path), 0)
                for n, r in best_per_length(result).items():
                    w.writerow([c.name, c.t60, method, n, r.spec.n_past, r.spec.n_future,
                                _rho(r.spec), f"{r.dev_fer:.4f}"])

    summary = {}
    fh, w = _writer(dest / "t60_sweep.csv",
                    ["t60", "condition", "cw_len", "n_past", "n_future", "rho_cw", "dev_fer"])
    with fh:
        for c in conds:
            b = _best(root / c.name / "autocw.csv")
            w.writerow([c.t60, c.name, b.cw_len, b.spec.n_past, b.spec.n_future, _rho(b.spec),
                        f"{b.dev_fer:.4f}"])

    header = ["condition", "kind", "t60", "xcorr_side_ratio", "gradient_past_future_ratio",
              "scw_window", "scw_fer", "autocw_window", "autocw_fer", "grid_window", "grid_fer",
              "autocw_trainings", "grid_trainings"]
    fh, w = _writer(dest / "summary.csv", header)
    with fh:
        for c in conds:
            base = root / c.name
            prof = read_profile_csv(base / "profile.csv")
            cells = {"condition": c.name, "kind": c.kind.value, "t60": c.t60,
                     "xcorr_side_ratio": f"{ratios[c.name]:.4f}",
                     "gradient_past_future_ratio": f"{prof.past_future_ratio():.4f}"}
            for key, fname in (("scw", "scw.csv"), ("autocw", "autocw.csv"), ("grid", "grid.csv")):
                b = _best(base / fname)
                cells[f"{key}_window"] = "" if b is None else str(b.spec)
                cells[f"{key}_fer"] = "" if b is None else f"{b.dev_fer:.4f}"
            cells["autocw_trainings"] = len(read_result_csv(base / "autocw.csv"))
            grid = base / "grid.csv"
            cells["grid_trainings"] = len(read_result_csv(grid)) if grid.exists() else ""
            w.writerow([cells[h] for h in header])
            summary[c.name] = cells

    (dest / "summary.txt").write_text(summary_text(conds, summary))
    return summary


def summary_text(conds, summary: dict[str, dict]) -> str:
    lines = []
    for kind in Condition:
        mine = [c for c in conds if c.kind is kind]
        if not mine:
            lines.append(f"{kind.value}: not run")
            continue
        for c in mine:
            s = summary[c.name]
            lines.append(f"{kind.value} {c.name} (T60 {c.t60:g} s)")
            lines.append(f"  best context window (AutoCW): {s['autocw_window']}  dev FER {s['autocw_fer']}%")
            if s["scw_window"]:
                lines.append(f"  best symmetric window:        {s['scw_window']}  dev FER {s['scw_fer']}%")
            if s["grid_window"]:
                lines.append(f"  best grid window:             {s['grid_window']}  dev FER {s['grid_fer']}%")
            else:
                lines.append("  grid search: not run")
            lines.append(f"  trainings: AutoCW {s['autocw_trainings']}, grid {s['grid_trainings'] or '-'}")
            lines.append(f"  gradient past/future ratio {s['gradient_past_future_ratio']}, "
                         f"correlation future/past energy {s['xcorr_side_ratio']}")
    return "\n".join(lines) + "\n"
