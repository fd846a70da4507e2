"""AutoCW window selection across reverberation times and seeds.

    python scripts/t60_sweep.py --t60 0 0.25 0.5 0.78 1.0 --seeds 0 1 2 --out t60_sweep.csv
"""
import argparse
import csv
import time

from autocw.compose import SearchConfig, autocw_search
from autocw.experiment import TaskConfig, build_task
from autocw.features import rho_cw
from autocw.nn import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t60", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.78, 1.0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--cw-min", type=int, default=3)
    ap.add_argument("--cw-max", type=int, default=11)
    ap.add_argument("--ir-kind", choices=("exp", "image"), default="exp")
    ap.add_argument("--out", default="t60_sweep.csv")
    args = ap.parse_args()

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t60", "seed", "best", "rho_cw", "dev_fer", "past_future_ratio", "seconds"])
        for t60 in args.t60:
            for seed in args.seeds:
                t0 = time.perf_counter()
                train, dev = build_task(TaskConfig(t60=t60, ir_kind=args.ir_kind), seed)
                cfg = SearchConfig(cw_min=args.cw_min, cw_max=args.cw_max, hidden_dims=(128, 128),
                                   train=TrainConfig(batch_size=32, max_epochs=15),
                                   probe_batch_size=128, seed=seed)
                res = autocw_search(train, dev, cfg)
                b = res.best
                rho = "" if b.cw_len == 1 else f"{rho_cw(b.spec):.2f}"
                row = [t60, seed, str(b.spec), rho, f"{b.dev_fer:.2f}",
                       f"{res.profile.past_future_ratio():.4f}", f"{time.perf_counter() - t0:.1f}"]
                w.writerow(row)
                fh.flush()
                print(*row, sep="\t")


if __name__ == "__main__":
    main()
