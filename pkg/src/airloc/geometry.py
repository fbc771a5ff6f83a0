"""Rigid-body pose algebra, pinhole camera model, and point-cloud transforms.

Conventions used throughout the package:

* A ``Pose`` is a camera-to-world transform: ``x_world = R @ x_cam + t``.
* Quaternions are unit length, scalar first ``(w, x, y, z)``.
* The camera is right-handed and looks along +z; the image origin is the
  top-left pixel, ``u`` grows along columns, ``v`` along rows.
* Translations, depths and point coordinates are millimetres; angles are
  radians.

All functions here are pure: they never mutate their inputs and hold no
shared state, so they are safe to call from any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Pose",
    "PoseDelta",
    "MotionNoise",
    "CameraModel",
    "PointCloud",
    "DepthMap",
    "FrameError",
    "quat_normalize",
    "quat_multiply",
    "quat_conjugate",
    "quat_rotate",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_from_rotvec",
    "compose",
    "inverse",
    "perturb",
    "pose_looking_along",
    "weighted_mean_pose",
    "transform_cloud",
    "project_points",
    "frustum_mask",
    "back_project",
]

WORLD_FRAME = "world"
CAMERA_FRAME = "camera"


class FrameError(ValueError):
    """A point cloud was supplied in the wrong coordinate frame."""


# ---------------------------------------------------------------------------
# Quaternion helpers (scalar-first, broadcasting over leading axes)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return ``q`` scaled to unit norm. Raises on (near-)zero quaternions."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    if np.any(norm < 1e-12):
        raise ValueError("cannot normalize a zero quaternion")
    return q / norm


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b``; composes rotations (a applied after b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors ``v`` (...,3) by unit quaternions ``q`` (...,4)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qvec = q[..., 1:]
    uv = np.cross(qvec, v)
    uuv = np.cross(qvec, uv)
    return v + 2.0 * (q[..., :1] * uv + uuv)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion; batched over leading axes."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion of a 3x3 rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError("expected a 3x3 rotation matrix")
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_from_rotvec(rotvec: np.ndarray) -> np.ndarray:
    """Quaternion for an axis-angle vector (angle = norm); batched."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # Series for sin(a/2)/a near zero keeps the map smooth at the origin.
    small = angle < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    q = np.concatenate([np.cos(half), rotvec * k], axis=-1)
    return q


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Pose:
    """Rigid transform: unit quaternion (w,x,y,z) plus translation in mm.

    The quaternion is renormalized on construction, so every pose produced
    by this module satisfies ``|q| = 1`` to machine precision.
    """

    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = np.asarray(self.quaternion, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(q)) or not np.all(np.isfinite(t)):
            raise ValueError("pose components must be finite")
        norm = math.sqrt(float(np.dot(q, q)))
        if norm < 1e-12:
            raise ValueError("zero quaternion is not a rotation")
        if abs(norm - 1.0) > 1e-15:
            q = q / norm
        self.quaternion = q
        self.translation = t

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3].copy())

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    @property
    def forward(self) -> np.ndarray:
        """Optical-axis direction (+z of the camera) in world coordinates."""
        return self.rotation_matrix[:, 2]

    def __repr__(self) -> str:  # compact, round-trip not needed
        q = ", ".join(f"{v:.6g}" for v in self.quaternion)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"Pose(q=[{q}], t=[{t}])"


# A relative motion between consecutive frames; same algebra as Pose.
PoseDelta = Pose


@dataclass
class MotionNoise:
    """Std-devs for additive translation noise (mm) and axis-angle rotation
    noise (radians), one component per axis."""

    sigma_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma_rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        st = np.asarray(self.sigma_translation, dtype=np.float64).reshape(3)
        sr = np.asarray(self.sigma_rotation, dtype=np.float64).reshape(3)
        if np.any(st < 0.0) or np.any(sr < 0.0):
            raise ValueError("noise std-devs must be non-negative")
        self.sigma_translation = st
        self.sigma_rotation = sr

    @classmethod
    def zero(cls) -> "MotionNoise":
        return cls()

    @classmethod
    def isotropic(cls, sigma_t_mm: float, sigma_r_rad: float) -> "MotionNoise":
        return cls(np.full(3, float(sigma_t_mm)), np.full(3, float(sigma_r_rad)))

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.sigma_translation) or np.any(self.sigma_rotation))


@dataclass
class CameraModel:
    """Pinhole intrinsics. Pixel (u, v) samples the ray
    ``((u - cx)/fx, (v - cy)/fy, 1)``; depth values are planar z-depth."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.5
    far: float = 80.0

    def __post_init__(self) -> None:
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.near < self.far):
            raise ValueError("require 0 < near < far")

    @classmethod
    def from_fov(
        cls, width: int, height: int, fov_deg: float, near: float = 0.5, far: float = 80.0
    ) -> "CameraModel":
        """Square-pixel camera with the given horizontal field of view."""
        f = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height, near, far)

    def pixel_rays(self) -> np.ndarray:
        """Unit ray directions through every pixel, shape (H, W, 3)."""
        u = np.arange(self.width, dtype=np.float64)
        v = np.arange(self.height, dtype=np.float64)
        uu, vv = np.meshgrid(u, v)
        d = np.stack([(uu - self.cx) / self.fx, (vv - self.cy) / self.fy, np.ones_like(uu)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


@dataclass
class PointCloud:
    """3-D points (N,3) in mm with an explicit coordinate-frame tag."""

    points: np.ndarray
    frame: str = WORLD_FRAME

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.frame not in (WORLD_FRAME, CAMERA_FRAME):
            raise FrameError(f"unknown frame tag {self.frame!r}")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class DepthMap:
    """Row-major planar depths in mm; invalid pixels are NaN."""

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError("depth map must be 2-D (H, W)")
        self.values = vals

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def compose(a: Pose, b: Pose) -> Pose:
    """Concatenate rigid transforms; equals the 4x4 product M(a) @ M(b)."""
    q = quat_multiply(a.quaternion, b.quaternion)
    t = a.translation + quat_rotate(a.quaternion, b.translation)
    return Pose(q, t)


def inverse(p: Pose) -> Pose:
    qc = quat_conjugate(p.quaternion)
    return Pose(qc, -quat_rotate(qc, p.translation))


def perturb(p: Pose, noise: MotionNoise, rng: np.random.Generator) -> Pose:
    """Gaussian-perturbed pose: translation gets additive world-frame noise,
    rotation gets a right-multiplied random axis-angle rotation.

    Draw order is fixed (translation first, then rotation) so that seeded
    runs are reproducible. Zero noise returns ``p`` itself without touching
    the generator.
    """
    if noise.is_zero:
        return p
    dt = rng.standard_normal(3) * noise.sigma_translation
    rv = rng.standard_normal(3) * noise.sigma_rotation
    q = quat_multiply(p.quaternion, quat_from_rotvec(rv))
    return Pose(q, p.translation + dt)


def pose_looking_along(position: np.ndarray, direction: np.ndarray) -> Pose:
    """Pose at ``position`` whose optical axis (+z) points along
    ``direction``, using the minimal (twist-free) rotation from +z."""
    d = np.asarray(direction, dtype=np.float64)
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise ValueError("direction must be nonzero")
    d = d / n
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, d)
    s = np.linalg.norm(axis)
    c = float(z @ d)
    if s < 1e-12:
        if c > 0.0:
            return Pose(np.array([1.0, 0.0, 0.0, 0.0]), position)
        # exactly reversed: rotate half a turn about x
        return Pose(np.array([0.0, 1.0, 0.0, 0.0]), position)
    rotvec = axis / s * math.atan2(s, c)
    return Pose(quat_from_rotvec(rotvec), position)


def weighted_mean_pose(poses: list[Pose], weights: np.ndarray) -> Pose:
    """Convex combination of poses.

    Translation is the weighted sum. Rotation is the weighted quaternion
    mean after aligning every quaternion to the hemisphere of the
    highest-weight pose, then renormalizing; adequate for the concentrated
    orientation distributions a tracking filter produces.
    """
    if len(poses) == 0:
        raise ValueError("weighted_mean_pose needs at least one pose")
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != len(poses):
        raise ValueError("poses and weights must have equal length")
    if np.any(w < 0.0):
        raise ValueError("weights must be non-negative")
    if abs(float(w.sum()) - 1.0) > 1e-6:
        raise ValueError("weights must sum to 1 within 1e-6")

    quats = np.stack([p.quaternion for p in poses])
    trans = np.stack([p.translation for p in poses])
    t = w @ trans

    ref = quats[int(np.argmax(w))]
    signs = np.where(quats @ ref < 0.0, -1.0, 1.0)
    q = (w * signs) @ quats
    norm = np.linalg.norm(q)
    if norm < 1e-12:
        # Pathological spread (antipodal inputs); fall back to the mode.
        q = ref
    return Pose(q, t)


def transform_cloud(p: Pose, cloud: PointCloud) -> PointCloud:
    """Map a world-frame cloud into the camera frame of pose ``p``."""
    if cloud.frame != WORLD_FRAME:
        raise FrameError("transform_cloud expects a world-frame cloud")
    qc = quat_conjugate(p.quaternion)
    pts = quat_rotate(qc, cloud.points - p.translation)
    return PointCloud(pts, frame=CAMERA_FRAME)


def project_points(points: np.ndarray, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of camera-frame points; returns ((N,2) uv, (N,) z).

    Points at or behind the camera plane project to NaN coordinates.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(z > 0.0, cam.fx * pts[:, 0] / z + cam.cx, np.nan)
        v = np.where(z > 0.0, cam.fy * pts[:, 1] / z + cam.cy, np.nan)
    return np.stack([u, v], axis=-1), z


def frustum_mask(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """True for camera-frame points that fall inside the viewing frustum
    (z in (0, far), projection within the image plane)."""
    uv, z = project_points(points, cam)
    inside = (z > 0.0) & (z < cam.far)
    inside &= (uv[:, 0] >= -0.5) & (uv[:, 0] < cam.width - 0.5)
    inside &= (uv[:, 1] >= -0.5) & (uv[:, 1] < cam.height - 0.5)
    return inside


def back_project(depth: DepthMap, cam: CameraModel) -> PointCloud:
    """Lift a depth map to a camera-frame point cloud.

    Pixel (u, v) with depth d maps to ``d * ((u-cx)/fx, (v-cy)/fy, 1)``;
    invalid (NaN) pixels are skipped. An all-invalid map yields an empty
    cloud.
    """
    if depth.height != cam.height or depth.width != cam.width:
        raise ValueError("depth map size does not match the camera model")
    mask = depth.valid_mask
    if not np.any(mask):
        return PointCloud(np.empty((0, 3)), frame=CAMERA_FRAME)
    vv, uu = np.nonzero(mask)
    d = depth.values[vv, uu]
    x = d * (uu - cam.cx) / cam.fx
    y = d * (vv - cam.cy) / cam.fy
    return PointCloud(np.stack([x, y, d], axis=-1), frame=CAMERA_FRAME)
