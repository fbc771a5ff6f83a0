"""Filter throughput benchmark at the shipped defaults.

Builds one default scenario (generation-4 tree, N=216 particles, clouds of
400 points), replays the same observation stream through the filter several
times after a warmup pass, and prints steps/s with a per-phase breakdown.
The cost of a full 256x256 depth render is timed separately since the
filter itself only casts sparse rays.
"""

import argparse
import statistics
import time

from airloc.experiments import (
    ExperimentConfig,
    build_scenario,
    generate_observations,
    run_filter,
)
from airloc.metrics import throughput
from airloc.perception import render_depth


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--target", default="LLLL")
    ap.add_argument("--mode", default="full", choices=["full", "no_bsa", "no_dvr"])
    args = ap.parse_args()

    cfg = ExperimentConfig.defaults().with_overrides(
        seed=args.seed, target_label=args.target, mode=args.mode
    )
    scenario = build_scenario(cfg)
    with_depth = args.mode == "no_bsa"
    stream = generate_observations(scenario, cfg, with_depth=with_depth)
    print(f"scenario: {len(scenario.gt)} frames, mode={args.mode}, "
          f"N={cfg.doc['filter']['n_particles']}")

    run_filter(scenario, stream, cfg)  # warmup compiles and caches kernels

    rates = []
    phase_totals: dict[str, float] = {}
    steps = 0
    for r in range(args.repeats):
        result = run_filter(scenario, stream, cfg)
        stats = throughput(result.diags)
        rates.append(stats.steps_per_second)
        steps = stats.steps
        for k, v in stats.phase_seconds.items():
            phase_totals[k] = phase_totals.get(k, 0.0) + v
        print(f"  run {r}: {stats.steps_per_second:.1f} steps/s")

    mean = statistics.mean(rates)
    std = statistics.stdev(rates) if len(rates) > 1 else 0.0
    print(f"filter throughput: {mean:.1f} +/- {std:.1f} steps/s over {args.repeats} runs")
    for k, v in phase_totals.items():
        print(f"  {k:10s} {1e3 * v / (steps * args.repeats):7.2f} ms/step")

    cam = cfg.camera()
    pose = scenario.gt.pose(len(scenario.gt) // 2)
    render_depth(scenario.tree, pose, cam)
    t0 = time.perf_counter()
    render_depth(scenario.tree, pose, cam)
    print(f"full {cam.width}x{cam.height} depth render: "
          f"{1e3 * (time.perf_counter() - t0):.0f} ms/frame (not on the filter path)")


if __name__ == "__main__":
    main()
