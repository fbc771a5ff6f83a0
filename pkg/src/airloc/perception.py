"""Observation providers: depth rendering, odometry, and landmark detection.

In a clinical system these three signals come from learned front-ends.
Here each is produced by a geometric oracle from ground truth, with
configurable corruption, so the fusion backend can be tested against known
answers. The interfaces are deliberately thin: anything that yields an
:class:`OdometrySample` per step or a list of :class:`LandmarkObservation`
per frame can drive the filter.

All oracles are pure given (tree, poses, config); RNGs are passed in, so
callers own reproducibility. Zero-noise configurations draw nothing from
the generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from airloc.airway import AirwayTree
from airloc.geometry import (
    CAMERA_FRAME,
    CameraModel,
    DepthMap,
    MotionNoise,
    PointCloud,
    Pose,
    PoseDelta,
    compose,
    frustum_mask,
    inverse,
    perturb,
    transform_cloud,
)
from airloc.raycast import get_caster

__all__ = [
    "LandmarkObservation",
    "OdometrySample",
    "LandmarkNoiseCfg",
    "FrameObservation",
    "render_depth",
    "oracle_odometry",
    "oracle_landmarks",
]

# Slack (mm) when comparing first-hit distance to point distance: a point is
# occluded only if some surface lies strictly closer along the sight line.
_OCCLUSION_TOL = 1e-3


@dataclass
class LandmarkObservation:
    """One detected branch: its label and a camera-frame depth point cloud."""

    label: str
    cloud: PointCloud

    def __post_init__(self) -> None:
        if self.cloud.frame != CAMERA_FRAME:
            raise ValueError("landmark clouds live in the camera frame")
        if len(self.cloud) == 0:
            raise ValueError("landmark observation needs a nonempty cloud")


@dataclass
class OdometrySample:
    """Relative pose between consecutive frames, with the corruption level
    that produced it (kept for experiment bookkeeping)."""

    delta: PoseDelta
    applied_noise: MotionNoise = field(default_factory=MotionNoise.zero)


@dataclass
class LandmarkNoiseCfg:
    """Corruption model for the landmark oracle."""

    sigma_depth: float = 1.0  # mm, applied along each viewing ray
    label_swap_prob: float = 0.0  # chance a detection takes its sibling's label
    min_visible_points: int = 10  # branches seen with fewer points are dropped
    max_points: int = 200  # detections are subsampled to at most this many

    def __post_init__(self) -> None:
        if self.sigma_depth < 0.0:
            raise ValueError("sigma_depth must be >= 0")
        if not 0.0 <= self.label_swap_prob <= 1.0:
            raise ValueError("label_swap_prob must lie in [0, 1]")
        if self.min_visible_points < 1 or self.max_points < 1:
            raise ValueError("point limits must be >= 1")


@dataclass
class FrameObservation:
    """Everything the filter may consume at one time step. ``depth`` and
    ``depth_cam`` are only populated when a depth-comparison mode needs
    them."""

    landmarks: list[LandmarkObservation] = field(default_factory=list)
    depth: DepthMap | None = None
    depth_cam: CameraModel | None = None


def render_depth(tree: AirwayTree, pose: Pose, cam: CameraModel) -> DepthMap:
    """Planar z-depth of the airway wall seen from ``pose``.

    Deterministic for fixed inputs; pixels with no wall inside [near, far)
    are NaN.
    """
    return get_caster(tree).render(pose, cam)


def oracle_odometry(
    gt_prev: Pose, gt_curr: Pose, noise: MotionNoise, rng: np.random.Generator
) -> OdometrySample:
    """Ground-truth relative pose, optionally corrupted by ``noise``."""
    delta = perturb(compose(inverse(gt_prev), gt_curr), noise, rng)
    return OdometrySample(delta=delta, applied_noise=noise)


def _sibling_label(tree: AirwayTree, branch_id: int) -> str | None:
    parent = tree.branch(branch_id).parent_id
    if parent is None:
        return None
    others = [i for i in tree.children(parent) if i != branch_id]
    return tree.branch(others[0]).label if others else None


def oracle_landmarks(
    tree: AirwayTree,
    gt_pose: Pose,
    cam: CameraModel,
    cfg: LandmarkNoiseCfg,
    rng: np.random.Generator,
) -> list[LandmarkObservation]:
    """Branch detections visible from ``gt_pose``.

    A branch is detected when at least ``cfg.min_visible_points`` of its
    stored surface points fall inside the view frustum with no nearer wall
    along the sight line (occlusion is tested with the ray caster). Each
    detection carries those points in the camera frame, perturbed along
    their viewing rays by ``sigma_depth``, subsampled to ``max_points``.
    With probability ``label_swap_prob`` a detection reports its sibling's
    label instead of its own.

    Branches are processed in id order, so RNG consumption is reproducible.
    Returns an empty list when nothing is visible.
    """
    caster = get_caster(tree)
    origin = gt_pose.translation
    out: list[LandmarkObservation] = []
    for br in tree.branches:
        if br.cloud.shape[0] == 0:
            continue
        cam_pts = transform_cloud(gt_pose, PointCloud(br.cloud)).points
        in_view = frustum_mask(cam_pts, cam)
        if int(in_view.sum()) < cfg.min_visible_points:
            continue
        world_pts = br.cloud[in_view]
        rays = world_pts - origin
        t_target = np.linalg.norm(rays, axis=1)
        dirs = rays / t_target[:, None]
        t_hit = caster.first_hits(
            np.broadcast_to(origin, dirs.shape), dirs, t_target + 5.0
        )
        # no nearer boundary -> unoccluded (NaN means nothing was hit at all)
        visible = ~(t_hit < t_target - _OCCLUSION_TOL)
        if int(visible.sum()) < cfg.min_visible_points:
            continue
        pts = cam_pts[in_view][visible]
        if cfg.sigma_depth > 0.0:
            z = pts[:, 2]
            eps = rng.standard_normal(pts.shape[0]) * cfg.sigma_depth
            scale = np.maximum(z + eps, 0.05) / z
            pts = pts * scale[:, None]
        if pts.shape[0] > cfg.max_points:
            keep = rng.choice(pts.shape[0], cfg.max_points, replace=False)
            pts = pts[np.sort(keep)]
        label = br.label
        if cfg.label_swap_prob > 0.0 and rng.uniform() < cfg.label_swap_prob:
            swapped = _sibling_label(tree, br.id)
            if swapped is not None:
                label = swapped
        out.append(LandmarkObservation(label=label, cloud=PointCloud(pts, frame=CAMERA_FRAME)))
    return out
