"""Gradient profiles per reverberation time, after a given number of probe epochs.

    python scripts/probe_analysis.py --t60 0 0.78 --epochs 1 3 --seeds 0 1
"""
import argparse
import csv

from autocw.compose import SearchConfig, probe_profile
from autocw.experiment import TaskConfig, build_task
from autocw.nn import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t60", type=float, nargs="+", default=[0.0, 0.78])
    ap.add_argument("--epochs", type=int, nargs="+", default=[1])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--cw-max", type=int, default=11)
    ap.add_argument("--mode", choices=("batch", "example"), default="batch")
    ap.add_argument("--out", default="profiles.csv")
    args = ap.parse_args()

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t60", "seed", "epochs", "p", "norm"])
        for t60 in args.t60:
            for seed in args.seeds:
                train, _ = build_task(TaskConfig(t60=t60), seed)
                cfg = SearchConfig(cw_max=args.cw_max, hidden_dims=(128, 128), probe_mode=args.mode,
                                   train=TrainConfig(batch_size=32), probe_batch_size=128, seed=seed)
                for ep in args.epochs:
                    prof = probe_profile(train, cfg, epochs=ep)
                    for p, v in prof.as_dict().items():
                        w.writerow([t60, seed, ep, p, repr(v)])
                    print(f"T60 {t60} seed {seed} epochs {ep}: past/future {prof.past_future_ratio():.3f}")


if __name__ == "__main__":
    main()
