"""Simulated endoscope insertions through an airway tree.

The scope advances along the centerline at a fixed speed (mm per step),
either from the trachea down to one target branch or on a depth-first
tour that reaches every leaf.  Lateral offset and view-direction jitter
are modelled as smooth AR(1) random walks so consecutive frames stay
coherent; both are clamped to keep the camera inside the lumen and
looking roughly along the direction of travel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .airway import AirwayTree
from .geometry import Pose, compose, pose_looking_along, quat_from_rotvec
from .trajectory import Trajectory


@dataclass(frozen=True)
class InsertionSpec:
    target_label: str | None = None  # None: depth-first tour of every leaf
    speed: float = 1.0  # mm of path advanced per step
    lateral_sigma: float = 0.0  # mm, stationary std of the off-axis offset
    orient_sigma: float = 0.0  # rad, stationary std of the view jitter
    smoothness: float = 0.9  # AR(1) coefficient of both jitter walks
    wall_margin: float = 0.8  # offsets clamped to this fraction of the radius

    def __post_init__(self) -> None:
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if self.lateral_sigma < 0 or self.orient_sigma < 0:
            raise ValueError("jitter sigmas must be nonnegative")
        if not 0.0 <= self.smoothness < 1.0:
            raise ValueError("smoothness must lie in [0, 1)")
        if not 0.0 < self.wall_margin < 1.0:
            raise ValueError("wall_margin must lie in (0, 1)")


def _path_polyline(tree: AirwayTree, spec: InsertionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Waypoint vertices and per-vertex radii for the requested route."""
    if spec.target_label is not None:
        if spec.target_label not in tree:
            raise ValueError(f"target branch {spec.target_label!r} is not in the tree")
        chain = tree.path_to(tree.by_label(spec.target_label).id)
        pts: list[np.ndarray] = []
        radii: list[float] = []
        for k, bid in enumerate(chain):
            br = tree.branch(bid)
            start = 1 if k > 0 else 0  # the first vertex repeats the parent's end
            pts.extend(br.centerline[start:])
            radii.extend(br.radii[start:])
        return np.asarray(pts), np.asarray(radii)

    # Depth-first Euler tour: walk down each branch, recurse, walk back up.
    pts = []
    radii = []

    def walk(bid: int) -> None:
        br = tree.branch(bid)
        start = 0 if not pts else 1
        pts.extend(br.centerline[start:])
        radii.extend(br.radii[start:])
        for child in tree.children(bid):
            walk(child)
        pts.extend(br.centerline[-2::-1])
        radii.extend(br.radii[-2::-1])

    walk(tree.root_id)
    return np.asarray(pts), np.asarray(radii)


def simulate_trajectory(
    tree: AirwayTree, spec: InsertionSpec, rng: np.random.Generator
) -> Trajectory:
    """Pose sequence of a simulated insertion.

    With zero jitter every pose sits exactly on the centerline with the
    camera forward along the travel direction, so the localized errors of
    a downstream estimator are entirely its own.
    """
    verts, radii = _path_polyline(tree, spec)
    seg = np.diff(verts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 1e-12
    if not np.any(keep):
        raise ValueError("route has zero length")
    seg = seg[keep]
    seg_len = seg_len[keep]
    starts = verts[:-1][keep]
    r0 = radii[:-1][keep]
    r1 = radii[1:][keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = float(cum[-1])

    n_steps = int(math.floor(total / spec.speed + 1e-9)) + 1
    jittered = spec.lateral_sigma > 0 or spec.orient_sigma > 0
    alpha = spec.smoothness
    innov = math.sqrt(1.0 - alpha * alpha)
    lat = np.zeros(2)
    ang = np.zeros(2)

    poses: list[Pose] = []
    for k in range(n_steps):
        s = min(k * spec.speed, total)
        j = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg_len) - 1)
        u = (s - cum[j]) / seg_len[j]
        point = starts[j] + u * seg[j]
        tangent = seg[j] / seg_len[j]
        radius = (1.0 - u) * r0[j] + u * r1[j]

        nominal = pose_looking_along(point, tangent)
        if not jittered:
            poses.append(nominal)
            continue

        lat = alpha * lat + spec.lateral_sigma * innov * rng.standard_normal(2)
        ang = alpha * ang + spec.orient_sigma * innov * rng.standard_normal(2)
        max_off = spec.wall_margin * radius
        off = lat.copy()
        norm = float(np.linalg.norm(off))
        if norm > max_off:
            off *= max_off / norm
        tilt = ang.copy()
        tnorm = float(np.linalg.norm(tilt))
        if tnorm > math.pi / 3:
            tilt *= (math.pi / 3) / tnorm
        R = nominal.rotation_matrix
        position = point + R[:, 0] * off[0] + R[:, 1] * off[1]
        jitter = Pose(quat_from_rotvec(np.array([tilt[0], tilt[1], 0.0])))
        oriented = compose(Pose(nominal.quaternion), jitter)
        poses.append(Pose(oriented.quaternion, position))

    return Trajectory.from_poses(poses)
