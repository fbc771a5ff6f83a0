"""Sequential Monte-Carlo pose filter over a branch-labeled tube tree.

One step is: propagate every particle through the odometry delta plus
diffusion noise, weight particles by how well the labeled landmark clouds
and the centerline prior explain their poses, read out the weighted mean
pose, then resample. The estimate is taken before resampling.

Weight model (mode "full"): raw_i = landmark_i * centerline_i, normalized
to sum 1 over the population (L1), so the estimate is a convex combination.
Mode "no_dvr" keeps only the centerline prior; mode "no_bsa" swaps the
landmark term for normalized cross-correlation between a small rendered
depth map per particle and the observed one. All-zero raw weights fall
back to uniform and raise a degeneracy flag in the diagnostics rather than
crashing mid-sequence.

Determinism: every particle slot owns an RNG substream (spawned once at
initialization), so propagation noise is independent of evaluation order
and the filter gives bit-identical output under any parallel schedule;
resampling draws a single uniform from the step RNG.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from airloc.airway import AirwayTree, nearest_centerline, nearest_centerline_batch
from airloc.geometry import (
    CameraModel,
    DepthMap,
    MotionNoise,
    PointCloud,
    Pose,
    PoseDelta,
    compose,
    frustum_mask,
    perturb,
    quat_from_rotvec,
    quat_multiply,
    quat_rotate,
    quat_to_matrix,
    transform_cloud,
)
from airloc.perception import FrameObservation, LandmarkObservation
from airloc.raycast import get_caster

__all__ = [
    "Particle",
    "ParticleSet",
    "FilterConfig",
    "StepDiagnostics",
    "initialize",
    "propagate",
    "binary_count_distance",
    "landmark_weight",
    "centerline_weight",
    "ncc_depth_weight",
    "ncc_score",
    "update_weights",
    "estimate",
    "resample",
    "step",
]


@dataclass
class Particle:
    """One pose hypothesis with its likelihood weight."""

    pose: Pose
    weight: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.weight) and self.weight >= 0.0):
            raise ValueError("particle weight must be finite and >= 0")


class ParticleSet:
    """Array-backed population of weighted pose hypotheses.

    Quaternions, translations and weights live in contiguous arrays so the
    weighting kernels can run over the whole population at once;
    ``particles`` materializes the conventional list view. ``streams``
    holds one RNG substream per slot (index, not lineage), which is what
    makes propagation noise independent of evaluation order.
    """

    def __init__(
        self,
        quats: np.ndarray,
        trans: np.ndarray,
        weights: np.ndarray,
        step_index: int = 0,
        streams: list[np.random.Generator] | None = None,
    ):
        quats = np.asarray(quats, dtype=np.float64).reshape(-1, 4)
        trans = np.asarray(trans, dtype=np.float64).reshape(-1, 3)
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        n = quats.shape[0]
        if n < 1:
            raise ValueError("particle set needs at least one particle")
        if trans.shape[0] != n or weights.shape[0] != n:
            raise ValueError("quats/trans/weights length mismatch")
        if np.any(~np.isfinite(weights)) or np.any(weights < 0.0):
            raise ValueError("weights must be finite and non-negative")
        if streams is not None and len(streams) != n:
            raise ValueError("need one RNG substream per particle slot")
        norms = np.linalg.norm(quats, axis=1, keepdims=True)
        if np.any(norms < 1e-12) or not np.all(np.isfinite(quats)):
            raise ValueError("invalid quaternion in particle set")
        self.quats = quats / norms
        self.trans = trans
        self.weights = weights
        self.step_index = int(step_index)
        self.streams = streams

    @classmethod
    def from_particles(cls, particles: list[Particle], step_index: int = 0) -> "ParticleSet":
        return cls(
            np.stack([p.pose.quaternion for p in particles]),
            np.stack([p.pose.translation for p in particles]),
            np.array([p.weight for p in particles]),
            step_index=step_index,
        )

    @property
    def n(self) -> int:
        return self.quats.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def particles(self) -> list[Particle]:
        return [
            Particle(Pose(self.quats[i], self.trans[i]), float(self.weights[i]))
            for i in range(self.n)
        ]

    def pose(self, i: int) -> Pose:
        return Pose(self.quats[i], self.trans[i])

    @property
    def ess(self) -> float:
        """Effective sample size 1 / sum(w^2) of the normalized weights."""
        s = float(self.weights.sum())
        if s <= 0.0:
            return 0.0
        w = self.weights / s
        return 1.0 / float(w @ w)

    def forwards(self) -> np.ndarray:
        """Optical-axis direction of every particle, (N, 3)."""
        return quat_to_matrix(self.quats)[:, :, 2]


@dataclass
class FilterConfig:
    """Knobs of the localization filter.

    ``sigma1_mode`` selects how the centerline distance spread is derived
    from the local lumen radius r: "pi_over_r" (the default), "r_over_pi",
    or "fixed" (use ``sigma1_fixed_mm``). ``gaussian_form`` chooses between
    properly normalized Gaussian densities and bare exponential kernels for
    the centerline prior; with per-particle sigmas the two weight particles
    differently."""

    n_particles: int = 216
    motion_noise: MotionNoise = field(default_factory=lambda: MotionNoise.isotropic(1.0, math.radians(2.0)))
    init_noise: MotionNoise = field(default_factory=lambda: MotionNoise.isotropic(2.0, math.radians(2.0)))
    rho_mm: float = 3.0
    sigma2_phi: float = math.pi / 6.0
    mode: str = "full"
    resampling: str = "always"
    ess_threshold: float = 0.5
    camera: CameraModel = field(default_factory=lambda: CameraModel.from_fov(256, 256, 60.0, near=0.5, far=80.0))
    sigma1_mode: str = "pi_over_r"
    sigma1_fixed_mm: float = 1.0
    gaussian_form: str = "normalized"

    def __post_init__(self) -> None:
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.rho_mm <= 0.0:
            raise ValueError("rho_mm must be positive")
        if self.mode not in ("full", "no_dvr", "no_bsa"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.resampling not in ("always", "ess_threshold"):
            raise ValueError(f"unknown resampling policy {self.resampling!r}")
        if not 0.0 < self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold is a fraction of N in (0, 1]")
        if self.sigma1_mode not in ("pi_over_r", "r_over_pi", "fixed"):
            raise ValueError(f"unknown sigma1_mode {self.sigma1_mode!r}")
        if self.sigma1_fixed_mm <= 0.0:
            raise ValueError("sigma1_fixed_mm must be positive")
        if self.gaussian_form not in ("normalized", "kernel"):
            raise ValueError(f"unknown gaussian_form {self.gaussian_form!r}")


@dataclass
class StepDiagnostics:
    """Per-step bookkeeping: degeneracy, ESS, and wall time per phase."""

    step_index: int
    ess: float
    degenerate: bool
    n_landmarks: int
    resampled: bool
    phase_seconds: dict[str, float]
    total_seconds: float


# ---------------------------------------------------------------------------
# Lifecycle
# ---------------------------------------------------------------------------

def initialize(cfg: FilterConfig, initial_pose: Pose, rng: np.random.Generator) -> ParticleSet:
    """Particle cloud around the initial pose with uniform weights."""
    n = cfg.n_particles
    streams = rng.spawn(n)
    quats = np.empty((n, 4))
    trans = np.empty((n, 3))
    for i in range(n):
        p = perturb(initial_pose, cfg.init_noise, streams[i])
        quats[i] = p.quaternion
        trans[i] = p.translation
    return ParticleSet(quats, trans, np.full(n, 1.0 / n), step_index=0, streams=streams)


def propagate(
    S: ParticleSet,
    delta: PoseDelta,
    cfg: FilterConfig,
    rng: np.random.Generator | None = None,
) -> ParticleSet:
    """Compose every particle with the odometry delta, then diffuse.

    Noise is drawn from each slot's own substream when the set has them;
    a set built without streams falls back to the passed ``rng``.
    """
    dq = delta.quaternion
    dt = delta.translation
    quats = quat_multiply(S.quats, dq[None, :])
    trans = S.trans + quat_rotate(S.quats, np.broadcast_to(dt, S.trans.shape))
    if not cfg.motion_noise.is_zero:
        sig_t = cfg.motion_noise.sigma_translation
        sig_r = cfg.motion_noise.sigma_rotation
        if S.streams is not None:
            gens = S.streams
        else:
            if rng is None:
                raise ValueError("set has no substreams: pass an rng to propagate")
            gens = [rng] * S.n
        draws = np.empty((S.n, 6))
        for i in range(S.n):
            draws[i] = gens[i].standard_normal(6)
        trans += draws[:, :3] * sig_t
        quats = quat_multiply(quats, quat_from_rotvec(draws[:, 3:] * sig_r))
    return ParticleSet(quats, trans, S.weights.copy(), S.step_index, S.streams)


# ---------------------------------------------------------------------------
# Cloud overlap metric
# ---------------------------------------------------------------------------

def binary_count_distance(A, B, rho: float) -> float:
    """Fraction of points in A with a neighbor in B strictly closer than rho.

    A and B may be PointClouds (frames must match) or bare (N, 3) arrays.
    An empty B scores 0; an empty A is an error (the fraction is undefined).
    """
    if isinstance(A, PointCloud) and isinstance(B, PointCloud) and A.frame != B.frame:
        raise ValueError("clouds must share a coordinate frame")
    a = A.points if isinstance(A, PointCloud) else np.asarray(A, dtype=np.float64).reshape(-1, 3)
    b = B.points if isinstance(B, PointCloud) else np.asarray(B, dtype=np.float64).reshape(-1, 3)
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    if a.shape[0] == 0:
        raise ValueError("source cloud A is empty")
    if b.shape[0] == 0:
        return 0.0
    dist, _ = cKDTree(b).query(a, k=1)
    return float(np.count_nonzero(dist < rho)) / a.shape[0]


# ---------------------------------------------------------------------------
# Landmark likelihood
# ---------------------------------------------------------------------------

def landmark_weight(
    particle: Particle,
    obs: list[LandmarkObservation],
    tree: AirwayTree,
    cfg: FilterConfig,
) -> float:
    """Sum over observations of the overlap between the observed cloud and
    the labeled branch's stored cloud as seen from the particle.

    Reference implementation; :func:`update_weights` runs the compiled
    population kernel, which the tests pin to this function.
    """
    score = 0.0
    for o in obs:
        if o.label not in tree:
            continue
        br = tree.by_label(o.label)
        if br.cloud.shape[0] == 0:
            continue
        cam_pts = transform_cloud(particle.pose, PointCloud(br.cloud)).points
        keep = frustum_mask(cam_pts, cfg.camera)
        score += binary_count_distance(o.cloud.points, cam_pts[keep], cfg.rho_mm)
    return score


@njit(cache=True)
def _landmark_scores_kernel(
    obs_pts, obs_start, obs_rows, br_pts, br_start,
    rot, trans, fx, fy, cx, cy, width, height, far, rho, out,
):
    n = rot.shape[0]
    n_obs = obs_start.shape[0] - 1
    max_tgt = 0
    for r in range(br_start.shape[0] - 1):
        sz = br_start[r + 1] - br_start[r]
        if sz > max_tgt:
            max_tgt = sz
    tgt = np.empty((max_tgt, 3))
    rho_sq = rho * rho
    for i in range(n):
        r00, r01, r02 = rot[i, 0, 0], rot[i, 0, 1], rot[i, 0, 2]
        r10, r11, r12 = rot[i, 1, 0], rot[i, 1, 1], rot[i, 1, 2]
        r20, r21, r22 = rot[i, 2, 0], rot[i, 2, 1], rot[i, 2, 2]
        t0, t1, t2 = trans[i, 0], trans[i, 1], trans[i, 2]
        score = 0.0
        for k in range(n_obs):
            row = obs_rows[k]
            if row < 0:
                continue
            cnt = 0
            minx = miny = minz = 1e30
            maxx = maxy = maxz = -1e30
            for p in range(br_start[row], br_start[row + 1]):
                px, py, pz = br_pts[p, 0], br_pts[p, 1], br_pts[p, 2]
                y2 = r20 * px + r21 * py + r22 * pz + t2
                if y2 <= 0.0 or y2 >= far:
                    continue
                y0 = r00 * px + r01 * py + r02 * pz + t0
                u = fx * y0 / y2 + cx
                if u < -0.5 or u >= width - 0.5:
                    continue
                y1 = r10 * px + r11 * py + r12 * pz + t1
                v = fy * y1 / y2 + cy
                if v < -0.5 or v >= height - 0.5:
                    continue
                tgt[cnt, 0] = y0
                tgt[cnt, 1] = y1
                tgt[cnt, 2] = y2
                cnt += 1
                if y0 < minx:
                    minx = y0
                if y0 > maxx:
                    maxx = y0
                if y1 < miny:
                    miny = y1
                if y1 > maxy:
                    maxy = y1
                if y2 < minz:
                    minz = y2
                if y2 > maxz:
                    maxz = y2
            if cnt == 0:
                continue
            matched = 0
            n_src = obs_start[k + 1] - obs_start[k]
            for a in range(obs_start[k], obs_start[k + 1]):
                ax, ay, az = obs_pts[a, 0], obs_pts[a, 1], obs_pts[a, 2]
                if (
                    ax < minx - rho or ax > maxx + rho
                    or ay < miny - rho or ay > maxy + rho
                    or az < minz - rho or az > maxz + rho
                ):
                    continue
                for b in range(cnt):
                    ddx = ax - tgt[b, 0]
                    ddy = ay - tgt[b, 1]
                    ddz = az - tgt[b, 2]
                    if ddx * ddx + ddy * ddy + ddz * ddz < rho_sq:
                        matched += 1
                        break
            score += matched / n_src
        out[i] = score


def _branch_cloud_cache(tree: AirwayTree) -> tuple[np.ndarray, np.ndarray, dict[str, int]]:
    """Concatenated branch clouds plus a label -> row lookup (cached)."""
    cached = getattr(tree, "_cloud_concat", None)
    if cached is None:
        pts, starts, rows = [], [0], {}
        for i, br in enumerate(tree.branches):
            pts.append(br.cloud)
            starts.append(starts[-1] + br.cloud.shape[0])
            rows[br.label] = i
        concat = np.concatenate(pts) if pts else np.empty((0, 3))
        cached = (np.ascontiguousarray(concat), np.asarray(starts, dtype=np.int64), rows)
        tree._cloud_concat = cached
    return cached


def _landmark_scores_batch(
    S: ParticleSet, obs: list[LandmarkObservation], tree: AirwayTree, cfg: FilterConfig
) -> np.ndarray:
    br_pts, br_start, rows = _branch_cloud_cache(tree)
    obs_pts = np.concatenate([o.cloud.points for o in obs])
    obs_start = np.zeros(len(obs) + 1, dtype=np.int64)
    obs_rows = np.empty(len(obs), dtype=np.int64)
    for k, o in enumerate(obs):
        obs_start[k + 1] = obs_start[k] + len(o.cloud)
        obs_rows[k] = rows.get(o.label, -1)
        if obs_rows[k] >= 0 and br_start[obs_rows[k] + 1] == br_start[obs_rows[k]]:
            obs_rows[k] = -1  # branch has no stored cloud
    rot_c2w = quat_to_matrix(S.quats)
    rot = np.ascontiguousarray(np.transpose(rot_c2w, (0, 2, 1)))
    trans = -np.einsum("nij,nj->ni", rot, S.trans)
    cam = cfg.camera
    out = np.empty(S.n)
    _landmark_scores_kernel(
        np.ascontiguousarray(obs_pts), obs_start, obs_rows, br_pts, br_start,
        rot, np.ascontiguousarray(trans),
        cam.fx, cam.fy, cam.cx, cam.cy, float(cam.width), float(cam.height),
        cam.far, cfg.rho_mm, out,
    )
    return out


# ---------------------------------------------------------------------------
# Centerline prior
# ---------------------------------------------------------------------------

def _sigma1(radius, cfg: FilterConfig):
    if cfg.sigma1_mode == "pi_over_r":
        return np.pi / radius
    if cfg.sigma1_mode == "r_over_pi":
        return radius / np.pi
    return np.full_like(np.asarray(radius, dtype=np.float64), cfg.sigma1_fixed_mm)


def _centerline_density(e, phi, radius, cfg: FilterConfig):
    s1 = _sigma1(radius, cfg)
    s2 = cfg.sigma2_phi
    ker = np.exp(-0.5 * (e / s1) ** 2 - 0.5 * (phi / s2) ** 2)
    if cfg.gaussian_form == "kernel":
        return ker
    return ker / (2.0 * np.pi * s1 * s2)


def centerline_weight(particle: Particle, tree: AirwayTree, cfg: FilterConfig) -> float:
    """Product of Gaussians in the distance to the nearest centerline and
    the misalignment with its tangent; spreads come from the local radius
    (see FilterConfig)."""
    pose = particle.pose
    q = nearest_centerline(tree, pose.translation, pose.forward)
    return float(_centerline_density(q.distance, q.angle, q.radius, cfg))


def _centerline_scores_batch(S: ParticleSet, tree: AirwayTree, cfg: FilterConfig) -> np.ndarray:
    q = nearest_centerline_batch(tree, S.trans, S.forwards())
    return _centerline_density(q["distance"], q["angle"], q["radius"], cfg)


# ---------------------------------------------------------------------------
# Depth NCC likelihood (no_bsa ablation)
# ---------------------------------------------------------------------------

def ncc_score(observed: np.ndarray, rendered: np.ndarray) -> float:
    """Zero-mean normalized cross-correlation between two depth maps,
    mapped to [0, 1]; joint coverage below half the pixels scores 0."""
    a = np.asarray(observed, dtype=np.float64).reshape(-1)
    b = np.asarray(rendered, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("depth maps must have identical shapes")
    joint = np.isfinite(a) & np.isfinite(b)
    if int(joint.sum()) * 2 < a.size:
        return 0.0
    da = a[joint] - a[joint].mean()
    db = b[joint] - b[joint].mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom <= 0.0:
        return 0.0
    ncc = float(da @ db) / denom
    return 0.5 * (ncc + 1.0)


def ncc_depth_weight(
    particle: Particle, observed: DepthMap, tree: AirwayTree, cam: CameraModel
) -> float:
    """Render the tree from the particle and correlate with the observed map."""
    rendered = get_caster(tree).render(particle.pose, cam)
    return ncc_score(observed.values, rendered.values)


def _ncc_scores_batch(
    S: ParticleSet, observed: DepthMap, tree: AirwayTree, cam: CameraModel
) -> np.ndarray:
    """All-particle NCC scores with a single batched ray cast."""
    caster = get_caster(tree)
    rays_cam = cam.pixel_rays().reshape(-1, 3)
    dz = rays_cam[:, 2]
    n, r = S.n, rays_cam.shape[0]
    rays_world = quat_rotate(S.quats[:, None, :], rays_cam[None, :, :])
    origins = np.broadcast_to(S.trans[:, None, :], (n, r, 3))
    t_max = np.broadcast_to(cam.far / dz + 1e-6, (n, r))
    t = caster.first_hits(origins.reshape(-1, 3), rays_world.reshape(-1, 3), t_max.reshape(-1))
    z = (t.reshape(n, r)) * dz[None, :]
    z[~((z >= cam.near) & (z < cam.far))] = np.nan

    a = observed.values.reshape(-1)
    valid_a = np.isfinite(a)
    joint = valid_a[None, :] & np.isfinite(z)
    cnt = joint.sum(axis=1)
    scores = np.zeros(n)
    ok = cnt * 2 >= r
    if not np.any(ok):
        return scores
    a0 = np.where(valid_a, a, 0.0)
    z0 = np.where(np.isfinite(z), z, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_a = (a0[None, :] * joint).sum(1) / cnt
        mean_z = (z0 * joint).sum(1) / cnt
        da = (a0[None, :] - mean_a[:, None]) * joint
        dzv = (z0 - mean_z[:, None]) * joint
        cov = (da * dzv).sum(1)
        var_a = (da * da).sum(1)
        var_z = (dzv * dzv).sum(1)
        denom = np.sqrt(var_a * var_z)
        ncc = np.where(denom > 0.0, cov / denom, -1.0)
    scores[ok] = 0.5 * (ncc[ok] + 1.0)
    return scores


# ---------------------------------------------------------------------------
# Weight update, estimate, resample, step
# ---------------------------------------------------------------------------

def update_weights(
    S: ParticleSet,
    obs: FrameObservation | list[LandmarkObservation],
    tree: AirwayTree,
    cfg: FilterConfig,
) -> tuple[ParticleSet, bool]:
    """Reweight the population from this frame's observations.

    Returns the reweighted set and a degeneracy flag; when every raw weight
    is zero (or the needed modality is absent and the prior vanishes), the
    weights fall back to uniform. A missing modality (no landmarks, no
    depth map) drops that factor rather than zeroing the population.
    """
    if not isinstance(obs, FrameObservation):
        obs = FrameObservation(landmarks=list(obs))
    raw = _centerline_scores_batch(S, tree, cfg)
    if cfg.mode == "full" and obs.landmarks:
        raw = raw * _landmark_scores_batch(S, obs.landmarks, tree, cfg)
    elif cfg.mode == "no_bsa" and obs.depth is not None:
        cam = obs.depth_cam
        if cam is None:
            raise ValueError("no_bsa mode needs the camera that produced the depth map")
        raw = raw * _ncc_scores_batch(S, obs.depth, tree, cam)
    raw = np.where(np.isfinite(raw), raw, 0.0)
    total = float(raw.sum())
    degenerate = not (total > 0.0)
    if degenerate:
        w = np.full(S.n, 1.0 / S.n)
    else:
        w = raw / total
    return ParticleSet(S.quats, S.trans, w, S.step_index, S.streams), degenerate


def estimate(S: ParticleSet) -> Pose:
    """Weighted mean pose: convex translation average plus hemisphere-
    aligned quaternion average (aligned to the heaviest particle)."""
    w = S.weights / S.weights.sum()
    t = w @ S.trans
    ref = S.quats[int(np.argmax(w))]
    signs = np.where(S.quats @ ref < 0.0, -1.0, 1.0)
    q = (w * signs) @ S.quats
    nrm = np.linalg.norm(q)
    if nrm < 1e-12:
        q = ref
    return Pose(q, t)


def resample(S: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """Systematic (low-variance) resampling to uniform weights.

    One uniform draw places N evenly spaced selection points, so particle i
    is picked floor/ceil of N*w_i times; slot substreams stay put.
    """
    w = S.weights / S.weights.sum()
    positions = (rng.uniform() + np.arange(S.n)) / S.n
    cumulative = np.cumsum(w)
    cumulative[-1] = 1.0
    idx = np.searchsorted(cumulative, positions, side="left")
    return ParticleSet(
        S.quats[idx], S.trans[idx], np.full(S.n, 1.0 / S.n), S.step_index, S.streams
    )


def step(
    S: ParticleSet,
    odometry,
    obs: FrameObservation | list[LandmarkObservation],
    tree: AirwayTree,
    cfg: FilterConfig,
    rng: np.random.Generator,
) -> tuple[ParticleSet, Pose, StepDiagnostics]:
    """One full filter iteration: propagate, weight, estimate, resample.

    The pose estimate uses the pre-resampling weights. Under the
    "ess_threshold" policy resampling is skipped while the effective sample
    size stays above the configured fraction of N.
    """
    delta = odometry.delta if hasattr(odometry, "delta") else odometry
    times: dict[str, float] = {}
    t_start = time.perf_counter()

    t0 = time.perf_counter()
    S = propagate(S, delta, cfg, rng)
    times["propagate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    S, degenerate = update_weights(S, obs, tree, cfg)
    times["weights"] = time.perf_counter() - t0
    ess = S.ess

    t0 = time.perf_counter()
    est = estimate(S)
    times["estimate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    do_resample = cfg.resampling == "always" or ess < cfg.ess_threshold * S.n
    if do_resample:
        S = resample(S, rng)
    times["resample"] = time.perf_counter() - t0

    S.step_index += 1
    n_landmarks = len(obs.landmarks) if isinstance(obs, FrameObservation) else len(obs)
    diag = StepDiagnostics(
        step_index=S.step_index,
        ess=ess,
        degenerate=degenerate,
        n_landmarks=n_landmarks,
        resampled=do_resample,
        phase_seconds=times,
        total_seconds=time.perf_counter() - t_start,
    )
    return S, est, diag
