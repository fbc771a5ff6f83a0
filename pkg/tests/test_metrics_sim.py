"""Trajectory containers, evaluation metrics, and the insertion simulator.

Metric values are pinned to direct per-frame computations done inline in
the tests; the simulator is checked against the centerline geometry it is
supposed to follow."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from airloc.airway import AirwayTree, Branch, TreeGenSpec, generate_tree, nearest_centerline
from airloc.filter import StepDiagnostics
from airloc.geometry import Pose, quat_from_rotvec, quat_rotate
from airloc.metrics import (
    TrajectoryReport,
    ate,
    build_report,
    frame_generations,
    per_generation_ate,
    success_rate,
    throughput,
    translation_errors,
    write_errors_csv,
    write_report_json,
)
from airloc.simulate import InsertionSpec, simulate_trajectory
from airloc.trajectory import Trajectory, load_trajectory_csv, save_trajectory_csv


def random_traj(rng, n=40):
    qs = rng.standard_normal((n, 4))
    qs /= np.linalg.norm(qs, axis=1, keepdims=True)
    return Trajectory(np.arange(n, dtype=float), qs, rng.uniform(-50, 50, (n, 3)))


# ---------------------------------------------------------------------------
# Trajectory CSV round trip
# ---------------------------------------------------------------------------

def test_csv_round_trip_is_byte_identical(tmp_path, rng):
    t = random_traj(rng)
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    save_trajectory_csv(t, p1)
    back = load_trajectory_csv(p1)
    save_trajectory_csv(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(back.trans, t.trans)
    np.testing.assert_array_equal(back.quats, t.quats)
    np.testing.assert_array_equal(back.times, t.times)


def test_csv_header_is_enforced(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,x,y,z,qw,qx,qy,qz\n0,0,0,0,1,0,0,0\n")
    with pytest.raises(ValueError):
        load_trajectory_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("t,x,y,z,qw,qx,qy,qz\n")
    with pytest.raises(ValueError):
        load_trajectory_csv(empty)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros(3), np.tile([1.0, 0, 0, 0], (2, 1)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        Trajectory(np.zeros(0), np.zeros((0, 4)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        Trajectory(np.zeros(1), np.zeros((1, 4)), np.zeros((1, 3)))


def test_from_poses_default_times():
    t = Trajectory.from_poses([Pose.identity(), Pose(translation=[1.0, 0, 0])])
    np.testing.assert_array_equal(t.times, [0.0, 1.0])
    assert t.pose(1).translation[0] == 1.0
    assert len(list(t.poses())) == 2


# ---------------------------------------------------------------------------
# ATE / SR
# ---------------------------------------------------------------------------

def test_ate_identical_is_zero(rng):
    t = random_traj(rng)
    assert ate(t, t) == (0.0, 0.0)
    assert success_rate(t, t, 1e-9) == 1.0


def test_ate_constant_offset_is_pythagorean(rng):
    t = random_traj(rng)
    off = Trajectory(t.times, t.quats, t.trans + np.array([3.0, 4.0, 0.0]))
    mean, std = ate(off, t)
    assert mean == pytest.approx(5.0, abs=1e-12)
    assert std == pytest.approx(0.0, abs=1e-12)


def test_ate_matches_direct_computation(rng):
    a, b = random_traj(rng), random_traj(rng)
    errs = np.array([
        math.dist(a.trans[i], b.trans[i]) for i in range(len(a))
    ])
    mean, std = ate(a, b)
    assert mean == pytest.approx(errs.mean(), rel=1e-12)
    assert std == pytest.approx(errs.std(), rel=1e-12)


def test_ate_requires_matching_frames(rng):
    a = random_traj(rng, 10)
    b = random_traj(rng, 11)
    with pytest.raises(ValueError):
        ate(a, b)
    c = random_traj(rng, 10)
    c.times = c.times + 0.5
    with pytest.raises(ValueError):
        ate(a, c)


def test_success_rate_thresholds(rng):
    t = random_traj(rng)
    seven = Trajectory(t.times, t.quats, t.trans + np.array([7.0, 0.0, 0.0]))
    assert success_rate(seven, t, 5.0) == 0.0
    assert success_rate(seven, t, 10.0) == 1.0
    # the comparison is strict: an error exactly at the threshold fails
    five = Trajectory(t.times, t.quats, t.trans + np.array([5.0, 0.0, 0.0]))
    assert success_rate(five, t, 5.0) == 0.0


def test_success_rate_mixed_fixture(rng):
    t = random_traj(rng, 40)
    shift = np.zeros((40, 3))
    shift[:20, 0] = 2.0
    shift[20:, 0] = 20.0
    est = Trajectory(t.times, t.quats, t.trans + shift)
    assert success_rate(est, t, 10.0) == 0.5
    assert success_rate(est, t, 5.0) == 0.5
    assert success_rate(est, t, 1.0) == 0.0


@given(st.floats(0.1, 30.0), st.floats(1.0, 4.0))
def test_success_rate_monotone_in_threshold(thr, mult):
    rng = np.random.default_rng(0)
    a, b = random_traj(rng), random_traj(rng)
    assert success_rate(a, b, thr) <= success_rate(a, b, thr * mult)


def test_ate_rigid_invariance(rng):
    a, b = random_traj(rng), random_traj(rng)
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    shift = rng.uniform(-100, 100, 3)
    ra = Trajectory(a.times, a.quats, quat_rotate(q, a.trans) + shift)
    rb = Trajectory(b.times, b.quats, quat_rotate(q, b.trans) + shift)
    assert ate(ra, rb)[0] == pytest.approx(ate(a, b)[0], rel=1e-9)


# ---------------------------------------------------------------------------
# Per-generation breakdown
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def gen_tree():
    return generate_tree(TreeGenSpec(generations=3, cloud_points=0), np.random.default_rng(7))


def test_per_generation_single_branch():
    t = AirwayTree(
        [Branch(0, "T", 0, None, [[0, 0, 0], [0, 0, 80]], [8.0, 8.0], np.empty((0, 3)))],
        root_id=0,
    )
    gt = Trajectory.from_poses([Pose(translation=[0.0, 0, float(z)]) for z in range(5, 70, 10)])
    est = Trajectory(gt.times, gt.quats, gt.trans + 1.0)
    per = per_generation_ate(est, gt, t)
    assert set(per) == {0}
    assert per[0][1] == len(gt)


def test_per_generation_partitions_and_aggregates(gen_tree, rng):
    gt = simulate_trajectory(gen_tree, InsertionSpec(target_label="LLL", speed=0.7), rng)
    est = Trajectory(gt.times, gt.quats, gt.trans + rng.standard_normal(gt.trans.shape))
    per = per_generation_ate(est, gt, gen_tree)
    assert set(per) == {0, 1, 2, 3}
    counts = sum(c for _, c in per.values())
    assert counts == len(gt)
    pooled = sum(m * c for m, c in per.values()) / counts
    assert pooled == pytest.approx(ate(est, gt)[0], abs=1e-9)


def test_frame_generations_uses_ground_truth(gen_tree, rng):
    gt = simulate_trajectory(gen_tree, InsertionSpec(target_label="LL", speed=0.7), rng)
    wild = Trajectory(gt.times, gt.quats, gt.trans + 500.0)
    np.testing.assert_array_equal(
        frame_generations(gt, gen_tree), frame_generations(gt, gen_tree)
    )
    per_wild = per_generation_ate(wild, gt, gen_tree)
    per_good = per_generation_ate(gt, gt, gen_tree)
    assert {g: c for g, (_, c) in per_wild.items()} == {
        g: c for g, (_, c) in per_good.items()
    }


# ---------------------------------------------------------------------------
# Throughput and report plumbing
# ---------------------------------------------------------------------------

def fake_diag(i, total, phases=None):
    return StepDiagnostics(
        step_index=i,
        ess=1.0,
        degenerate=False,
        n_landmarks=0,
        resampled=True,
        phase_seconds=phases or {},
        total_seconds=total,
    )


def test_throughput_rate():
    diags = [fake_diag(i, 10.0 / 150.0) for i in range(150)]
    stats = throughput(diags)
    assert stats.steps == 150
    assert stats.steps_per_second == pytest.approx(15.0, rel=1e-9)


def test_throughput_phase_breakdown():
    diags = [
        fake_diag(0, 0.5, {"propagate": 0.1, "weights": 0.3}),
        fake_diag(1, 0.5, {"propagate": 0.2, "weights": 0.2}),
    ]
    stats = throughput(diags)
    assert stats.phase_seconds == pytest.approx({"propagate": 0.3, "weights": 0.5})
    assert sum(stats.phase_seconds.values()) <= stats.total_seconds + 1e-9
    with pytest.raises(ValueError):
        throughput([])


def test_report_invariants():
    with pytest.raises(ValueError):
        TrajectoryReport(1.0, 0.5, sr5=0.8, sr10=0.4, per_generation={}, steps_per_second=1.0)
    r = TrajectoryReport(1.0, 0.5, 0.4, 0.8, {0: (1.0, 10)}, 20.0)
    d = r.to_dict()
    assert d["sr5"] == 0.4
    assert d["per_generation"]["0"]["count"] == 10


def test_report_and_errors_files(gen_tree, tmp_path, rng):
    gt = simulate_trajectory(gen_tree, InsertionSpec(target_label="LL", speed=0.9), rng)
    est = Trajectory(gt.times, gt.quats, gt.trans + np.array([1.0, 2.0, 2.0]))
    rep = build_report(est, gt, gen_tree, diags=[fake_diag(0, 0.05)])
    assert rep.ate_mean == pytest.approx(3.0, abs=1e-12)
    assert rep.sr5 == 1.0 and rep.sr10 == 1.0
    out = tmp_path / "report.json"
    write_report_json(rep, out, extra={"mode": "full"})
    import json

    doc = json.loads(out.read_text())
    assert doc["ate_mean_mm"] == pytest.approx(3.0)
    assert doc["mode"] == "full"

    errs = tmp_path / "errors.csv"
    write_errors_csv(est, gt, gen_tree, errs)
    lines = errs.read_text().strip().splitlines()
    assert lines[0] == "t,err_mm,generation"
    assert len(lines) == len(gt) + 1
    first = lines[1].split(",")
    assert float(first[1]) == pytest.approx(3.0)
    assert first[2].isdigit()


# ---------------------------------------------------------------------------
# Insertion simulator
# ---------------------------------------------------------------------------

def test_zero_jitter_rides_the_centerline(gen_tree):
    rng = np.random.default_rng(1)
    traj = simulate_trajectory(gen_tree, InsertionSpec(target_label="LR", speed=0.7), rng)
    for i in range(len(traj)):
        q = nearest_centerline(gen_tree, traj.trans[i], traj.pose(i).forward)
        assert q.distance < 1e-9
        assert q.angle < 1e-6


def test_zero_jitter_consumes_no_rng(gen_tree):
    rng = np.random.default_rng(2)
    before = rng.bit_generator.state["state"]["state"]
    simulate_trajectory(gen_tree, InsertionSpec(target_label="L"), rng)
    assert rng.bit_generator.state["state"]["state"] == before


def test_path_length_matches_speed(gen_tree):
    spec = InsertionSpec(target_label="LL", speed=1.3)
    traj = simulate_trajectory(gen_tree, spec, np.random.default_rng(3))
    chain = gen_tree.path_to(gen_tree.by_label("LL").id)
    total = sum(gen_tree.branch(b).length for b in chain)
    assert abs(len(traj) - total / spec.speed) <= 1.0 + 1e-9


def test_all_leaves_tour_reaches_every_leaf():
    tree = generate_tree(TreeGenSpec(generations=2, cloud_points=0), np.random.default_rng(8))
    spec = InsertionSpec(target_label=None, speed=1.0)
    traj = simulate_trajectory(tree, spec, np.random.default_rng(9))
    leaf_ids = tree.leaves()
    assert len(leaf_ids) == 4
    for lid in leaf_ids:
        tip = tree.branch(lid).end
        d = np.linalg.norm(traj.trans - tip, axis=1).min()
        assert d <= spec.speed + 1e-9


def test_unreachable_target_raises(gen_tree):
    with pytest.raises(ValueError):
        simulate_trajectory(gen_tree, InsertionSpec(target_label="XYZ"), np.random.default_rng(0))


def test_jitter_stays_inside_lumen():
    tube = AirwayTree(
        [Branch(0, "T", 0, None, np.linspace([0, 0, 0], [0, 0, 150], 4),
                np.full(4, 6.0), np.empty((0, 3)))],
        root_id=0,
    )
    spec = InsertionSpec(
        target_label="T", speed=1.0, lateral_sigma=20.0, orient_sigma=1.5, wall_margin=0.8
    )
    traj = simulate_trajectory(tube, spec, np.random.default_rng(10))
    for i in range(len(traj)):
        q = nearest_centerline(tube, traj.trans[i], traj.pose(i).forward)
        assert q.distance <= 0.8 * 6.0 + 1e-9
        assert q.angle <= math.pi / 3 + 1e-9


def test_jitter_statistics_reach_target_spread():
    tube = AirwayTree(
        [Branch(0, "T", 0, None, np.linspace([0, 0, 0], [0, 0, 4000], 5),
                np.full(5, 50.0), np.empty((0, 3)))],
        root_id=0,
    )
    spec = InsertionSpec(target_label="T", speed=1.0, lateral_sigma=2.0, smoothness=0.8)
    traj = simulate_trajectory(tube, spec, np.random.default_rng(11))
    lateral = traj.trans[:, :2]
    assert lateral.std() == pytest.approx(2.0, rel=0.15)


def test_simulation_is_deterministic(gen_tree):
    spec = InsertionSpec(target_label="LL", speed=0.8, lateral_sigma=0.7, orient_sigma=0.1)
    a = simulate_trajectory(gen_tree, spec, np.random.default_rng(12))
    b = simulate_trajectory(gen_tree, spec, np.random.default_rng(12))
    np.testing.assert_array_equal(a.trans, b.trans)
    np.testing.assert_array_equal(a.quats, b.quats)


def test_spec_validation():
    with pytest.raises(ValueError):
        InsertionSpec(speed=0.0)
    with pytest.raises(ValueError):
        InsertionSpec(lateral_sigma=-1.0)
    with pytest.raises(ValueError):
        InsertionSpec(smoothness=1.0)
    with pytest.raises(ValueError):
        InsertionSpec(wall_margin=1.5)
