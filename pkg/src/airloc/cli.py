"""Command-line entry point.

Subcommands map one-to-one onto the functions in ``experiments``:

    airloc run      --config c.json --seed 7 --out results/run7
    airloc ablation --config c.json --out results/ablation
    airloc sweep    --config c.json --out results/sweep
    airloc gen-tree --config c.json --out world
    airloc sim-traj --config c.json --out world

``--seed`` overrides the config's seed, ``--config`` may be omitted to
run on pure defaults.  Inputs are validated before anything is written,
so a failing invocation leaves no partial output directory behind.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (
    ExperimentConfig,
    generate_tree_artifact,
    run_ablation,
    run_experiment,
    run_sweep,
    simulate_trajectory_artifact,
)


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = ExperimentConfig.from_json(path)
    else:
        cfg = ExperimentConfig.defaults()
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _preflight(cfg: ExperimentConfig) -> None:
    """Fail fast on dangling file references before any output exists."""
    for section, key in (("tree", "file"), ("trajectory", "file")):
        name = cfg.doc[section][key]
        if name is not None and not cfg._resolve(name).is_file():
            raise FileNotFoundError(f"{section} file not found: {name}")


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    _preflight(cfg)
    result = run_experiment(cfg, args.out)
    rep = result.report
    print(
        f"ate {rep.ate_mean:.3f} +/- {rep.ate_std:.3f} mm | "
        f"sr5 {rep.sr5:.2f} sr10 {rep.sr10:.2f} | "
        f"{rep.steps_per_second:.1f} steps/s | wrote {args.out}"
    )
    return 0


def _cmd_ablation(args) -> int:
    cfg = _load_config(args)
    _preflight(cfg)
    table = run_ablation(cfg, args.out)
    width = max(len(m) for m in table)
    for mode, row in table.items():
        print(
            f"{mode:<{width}}  median ate {row['median_ate_mm']:8.3f} mm  "
            f"sr5 {row['mean_sr5']:.2f}  sr10 {row['mean_sr10']:.2f}  "
            f"({row['runs']} runs)"
        )
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    _preflight(cfg)
    rows = run_sweep(cfg, args.out)
    for r in rows:
        print(
            f"N={r['n_particles']:<6} ate {r['ate_mean_mm']:8.3f} mm  "
            f"accuracy {r['accuracy_pct']:6.1f}%  {r['steps_per_second']:.1f} steps/s"
        )
    return 0


def _cmd_gen_tree(args) -> int:
    cfg = _load_config(args)
    tree = generate_tree_artifact(cfg, args.out)
    print(f"{len(tree)} branches, max generation {tree.max_generation} -> {args.out}/tree.json")
    return 0


def _cmd_sim_traj(args) -> int:
    cfg = _load_config(args)
    _preflight(cfg)
    traj = simulate_trajectory_artifact(cfg, args.out)
    print(f"{len(traj)} poses -> {args.out}/trajectory.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airloc",
        description="Monte-Carlo localization experiments in synthetic airway trees",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "run": ("single filter run with full artifact output", _cmd_run),
        "ablation": ("compare full/no_bsa/no_dvr/dead-reckoning on shared inputs", _cmd_ablation),
        "sweep": ("particle-count sensitivity sweep", _cmd_sweep),
        "gen-tree": ("generate a synthetic airway tree JSON", _cmd_gen_tree),
        "sim-traj": ("simulate an insertion trajectory CSV", _cmd_sim_traj),
    }
    for name, (help_text, fn) in handlers.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="experiment JSON (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=str, required=True, help="output directory")
        p.set_defaults(handler=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
