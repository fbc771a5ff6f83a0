"""Trajectory evaluation: ATE, success rates, per-generation breakdown,
and throughput accounting.

ATE is deliberately computed without any alignment step.  Estimated and
ground-truth poses live in the same world frame by construction, and a
least-squares alignment would mask exactly the global drift we want to
measure.  Frames are attributed to airway generations through the
ground-truth pose (never the estimate) so the breakdown does not move
around as the estimator changes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .airway import AirwayTree, nearest_centerline
from .filter import StepDiagnostics
from .trajectory import Trajectory


def _check_pair(est: Trajectory, gt: Trajectory) -> None:
    if len(est) != len(gt):
        raise ValueError(f"trajectory length mismatch: {len(est)} vs {len(gt)}")
    if not np.allclose(est.times, gt.times, atol=1e-9):
        raise ValueError("trajectory timestamps do not match")


def translation_errors(est: Trajectory, gt: Trajectory) -> np.ndarray:
    """Per-frame Euclidean translation error in mm."""
    _check_pair(est, gt)
    return np.linalg.norm(est.trans - gt.trans, axis=1)


def ate(est: Trajectory, gt: Trajectory) -> tuple[float, float]:
    """Mean and std of the per-frame translation error (no alignment)."""
    errs = translation_errors(est, gt)
    return float(errs.mean()), float(errs.std())


def success_rate(est: Trajectory, gt: Trajectory, threshold: float) -> float:
    """Fraction of frames with translation error strictly below threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    errs = translation_errors(est, gt)
    return float(np.count_nonzero(errs < threshold)) / len(errs)


def frame_generations(gt: Trajectory, tree: AirwayTree) -> np.ndarray:
    """Airway generation of each ground-truth frame.

    A frame belongs to the generation of the branch whose centerline is
    nearest to the ground-truth camera position.
    """
    gens = np.empty(len(gt), dtype=int)
    for i in range(len(gt)):
        q = nearest_centerline(tree, gt.trans[i], gt.pose(i).forward)
        gens[i] = tree.generation_of(q.branch_id)
    return gens


def per_generation_ate(
    est: Trajectory, gt: Trajectory, tree: AirwayTree
) -> dict[int, tuple[float, int]]:
    """Map generation -> (ATE mean over its frames, frame count)."""
    errs = translation_errors(est, gt)
    gens = frame_generations(gt, tree)
    out: dict[int, tuple[float, int]] = {}
    for g in sorted(set(gens.tolist())):
        mask = gens == g
        out[g] = (float(errs[mask].mean()), int(mask.sum()))
    return out


@dataclass
class ThroughputStats:
    steps: int
    total_seconds: float
    steps_per_second: float
    phase_seconds: dict[str, float] = field(default_factory=dict)


def throughput(diags: list[StepDiagnostics]) -> ThroughputStats:
    """Steps divided by summed wall time, with a per-phase breakdown."""
    if not diags:
        raise ValueError("need at least one step")
    total = float(sum(d.total_seconds for d in diags))
    phases: dict[str, float] = {}
    for d in diags:
        for name, sec in d.phase_seconds.items():
            phases[name] = phases.get(name, 0.0) + float(sec)
    sps = len(diags) / total if total > 0 else float("inf")
    return ThroughputStats(len(diags), total, sps, phases)


@dataclass
class TrajectoryReport:
    ate_mean: float
    ate_std: float
    sr5: float
    sr10: float
    per_generation: dict[int, tuple[float, int]]
    steps_per_second: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.sr5 <= self.sr10 <= 1.0):
            raise ValueError(
                f"success rates out of order: sr5={self.sr5}, sr10={self.sr10}"
            )

    def to_dict(self) -> dict:
        return {
            "ate_mean_mm": self.ate_mean,
            "ate_std_mm": self.ate_std,
            "sr5": self.sr5,
            "sr10": self.sr10,
            "per_generation": {
                str(g): {"ate_mean_mm": m, "count": c}
                for g, (m, c) in sorted(self.per_generation.items())
            },
            "steps_per_second": self.steps_per_second,
        }


def build_report(
    est: Trajectory,
    gt: Trajectory,
    tree: AirwayTree,
    diags: list[StepDiagnostics] | None = None,
) -> TrajectoryReport:
    mean, std = ate(est, gt)
    per_gen = per_generation_ate(est, gt, tree)
    counts = sum(c for _, c in per_gen.values())
    assert counts == len(gt), "generation counts must partition the frames"
    sps = throughput(diags).steps_per_second if diags else 0.0
    return TrajectoryReport(
        ate_mean=mean,
        ate_std=std,
        sr5=success_rate(est, gt, 5.0),
        sr10=success_rate(est, gt, 10.0),
        per_generation=per_gen,
        steps_per_second=sps,
    )


def write_report_json(report: TrajectoryReport, path: str | Path, extra: dict | None = None) -> None:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_errors_csv(
    est: Trajectory, gt: Trajectory, tree: AirwayTree, path: str | Path
) -> None:
    """Per-frame error table `t,err_mm,generation` for external plotting."""
    errs = translation_errors(est, gt)
    gens = frame_generations(gt, tree)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "err_mm", "generation"])
        for i in range(len(gt)):
            w.writerow([repr(float(gt.times[i])), repr(float(errs[i])), int(gens[i])])
