"""Accuracy versus particle count on a single shared scenario.

Each population size sees the same tree, trajectory and observations; the
accuracy column normalizes the best (lowest) ATE in the sweep to 100%.
"""

import argparse
from pathlib import Path

from airloc.experiments import ExperimentConfig, run_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results/sweep"))
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--target", default="LLLL")
    ap.add_argument("--n", type=int, nargs="+", default=None,
                    help="particle counts (default: 54 108 216 432)")
    args = ap.parse_args()

    doc = {"seed": args.seed, "trajectory": {"target_label": args.target}}
    if args.n:
        doc["sweep"] = {"n_list": args.n}
    rows = run_sweep(ExperimentConfig.from_dict(doc), args.out)

    print(f"{'N':>6s} {'ATE mm':>8s} {'accuracy %':>10s} {'steps/s':>8s}")
    for row in rows:
        print(f"{row['n_particles']:6d} {row['ate_mean_mm']:8.2f} "
              f"{row['accuracy_pct']:10.1f} {row['steps_per_second']:8.1f}")


if __name__ == "__main__":
    main()
