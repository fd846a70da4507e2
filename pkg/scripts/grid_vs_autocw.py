"""AutoCW against the exhaustive grid on a reduced window range.

    python scripts/grid_vs_autocw.py --t60 0.78 --seeds 0 1 2 --cw-max 13
"""
import argparse

from autocw.compose import SearchConfig, autocw_search, grid_search
from autocw.experiment import TaskConfig, build_task
from autocw.nn import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t60", type=float, default=0.78)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--cw-min", type=int, default=1)
    ap.add_argument("--cw-max", type=int, default=13)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    for seed in args.seeds:
        train, dev = build_task(TaskConfig(t60=args.t60), seed)
        cfg = SearchConfig(cw_min=args.cw_min, cw_max=args.cw_max, hidden_dims=(128, 128),
                           train=TrainConfig(batch_size=32, max_epochs=15), probe_batch_size=128,
                           seed=seed, jobs=args.jobs)
        auto = autocw_search(train, dev, cfg)
        grid = grid_search(train, dev, cfg)
        print(f"seed {seed}: AutoCW {auto.best.spec} {auto.best.dev_fer:.2f}% "
              f"({auto.n_full_trainings} trainings + {auto.n_probe_epochs} probe epoch) | "
              f"grid {grid.best.spec} {grid.best.dev_fer:.2f}% ({grid.n_full_trainings} trainings)")


if __name__ == "__main__":
    main()
