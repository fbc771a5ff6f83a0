"""Branch-labeled tubular tree: data model, synthetic generator, queries.

A tree is a set of branches. Each branch carries a polyline centerline
(ordered proximal to distal), a per-vertex lumen radius, a surface point
cloud, and a path-style label ("T" for the root, then "L"/"R" appended per
bifurcation). Child centerlines start exactly at the last vertex of their
parent, so the union of tubes is a connected cavity.

Distances are millimetres. Branch ids are dense small integers but nothing
below assumes contiguity; queries order ties by (distance, branch_id,
segment index) so results do not depend on the order branches are stored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Branch",
    "AirwayTree",
    "TreeGenSpec",
    "CenterlineQuery",
    "generate_tree",
    "branch_cloud",
    "nearest_centerline",
    "nearest_centerline_batch",
    "save_tree",
    "load_tree",
]

# Below this many segments the exact O(N*S) query is faster than pruning.
_KDTREE_SEGMENT_THRESHOLD = 1024


@dataclass
class Branch:
    """One airway segment between bifurcations."""

    id: int
    label: str
    generation: int
    parent_id: int | None
    centerline: np.ndarray  # (M, 3) vertices, proximal first
    radii: np.ndarray  # (M,) lumen radius at each vertex
    cloud: np.ndarray  # (K, 3) points on the tube surface, world frame

    def __post_init__(self) -> None:
        c = np.asarray(self.centerline, dtype=np.float64).reshape(-1, 3)
        r = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        k = np.asarray(self.cloud, dtype=np.float64).reshape(-1, 3)
        if c.shape[0] < 2:
            raise ValueError(f"branch {self.id}: centerline needs >= 2 vertices")
        if r.shape[0] != c.shape[0]:
            raise ValueError(f"branch {self.id}: radii/centerline length mismatch")
        if np.any(r <= 0.0):
            raise ValueError(f"branch {self.id}: radii must be positive")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(r)) and np.all(np.isfinite(k))):
            raise ValueError(f"branch {self.id}: non-finite geometry")
        seg_len = np.linalg.norm(np.diff(c, axis=0), axis=1)
        if np.any(seg_len < 1e-9):
            raise ValueError(f"branch {self.id}: degenerate centerline segment")
        self.centerline = c
        self.radii = r
        self.cloud = k

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.centerline, axis=0), axis=1).sum())

    @property
    def start(self) -> np.ndarray:
        return self.centerline[0]

    @property
    def end(self) -> np.ndarray:
        return self.centerline[-1]

    @property
    def mean_radius(self) -> float:
        return float(self.radii.mean())


@dataclass
class CenterlineQuery:
    """Result of a nearest-centerline lookup for one camera pose."""

    branch_id: int
    distance: float  # mm from the query point to the centerline
    angle: float  # rad between camera forward and the (directed) tangent
    radius: float  # lumen radius at the closest centerline point
    seg_index: int  # segment index within the branch
    closest_point: np.ndarray


class AirwayTree:
    """Immutable container of branches with id/label lookups."""

    def __init__(self, branches: list[Branch], root_id: int):
        if not branches:
            raise ValueError("tree needs at least one branch")
        ids = [b.id for b in branches]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate branch ids")
        labels = [b.label for b in branches]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate branch labels")
        self._by_id = {b.id: b for b in branches}
        if root_id not in self._by_id:
            raise ValueError("root_id not present")
        root = self._by_id[root_id]
        if root.parent_id is not None:
            raise ValueError("root branch must have parent_id = None")
        self._by_label = {b.label: b for b in branches}
        self.root_id = root_id
        self._children: dict[int, list[int]] = {b.id: [] for b in branches}
        for b in branches:
            if b.parent_id is None:
                if b.id != root_id:
                    raise ValueError(f"branch {b.id} has no parent but is not the root")
                continue
            if b.parent_id not in self._by_id:
                raise ValueError(f"branch {b.id}: unknown parent {b.parent_id}")
            parent = self._by_id[b.parent_id]
            if not np.allclose(b.start, parent.end, atol=1e-6):
                raise ValueError(f"branch {b.id} does not start at its parent's end")
            self._children[b.parent_id].append(b.id)
        for kids in self._children.values():
            kids.sort()
        self._segments: dict | None = None

    # -- lookups ----------------------------------------------------------

    @property
    def branches(self) -> list[Branch]:
        """Branches sorted by id."""
        return [self._by_id[i] for i in sorted(self._by_id)]

    def branch(self, branch_id: int) -> Branch:
        return self._by_id[branch_id]

    def by_label(self, label: str) -> Branch:
        return self._by_label[label]

    def __contains__(self, label: str) -> bool:
        return label in self._by_label

    def children(self, branch_id: int) -> list[int]:
        return list(self._children[branch_id])

    def leaves(self) -> list[int]:
        return sorted(i for i, kids in self._children.items() if not kids)

    def path_to(self, branch_id: int) -> list[int]:
        """Branch ids from the root down to (and including) branch_id."""
        path = [branch_id]
        while (pid := self._by_id[path[-1]].parent_id) is not None:
            path.append(pid)
        return path[::-1]

    def generation_of(self, branch_id: int) -> int:
        return self._by_id[branch_id].generation

    @property
    def max_generation(self) -> int:
        return max(b.generation for b in self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)

    # -- flattened segment view (built once, used by queries and rendering)

    def segment_arrays(self) -> dict:
        """All centerline segments flattened into parallel arrays, ordered
        by (branch_id, segment index). Cached after the first call."""
        if self._segments is None:
            a, b, ra, rb, bid, sid = [], [], [], [], [], []
            for br in self.branches:
                c, r = br.centerline, br.radii
                n = c.shape[0] - 1
                a.append(c[:-1])
                b.append(c[1:])
                ra.append(r[:-1])
                rb.append(r[1:])
                bid.append(np.full(n, br.id, dtype=np.int64))
                sid.append(np.arange(n, dtype=np.int64))
            seg_a = np.concatenate(a)
            seg_b = np.concatenate(b)
            ab = seg_b - seg_a
            ab_sq = np.einsum("ij,ij->i", ab, ab)
            self._segments = {
                "a": seg_a,
                "b": seg_b,
                "ab": ab,
                "ab_sq": ab_sq,
                "ra": np.concatenate(ra),
                "rb": np.concatenate(rb),
                "branch_id": np.concatenate(bid),
                "seg_index": np.concatenate(sid),
                "midpoint": 0.5 * (seg_a + seg_b),
                "half_len": 0.5 * np.sqrt(ab_sq),
            }
        return self._segments

    def _segment_kdtree(self) -> cKDTree:
        segs = self.segment_arrays()
        if "kdtree" not in segs:
            segs["kdtree"] = cKDTree(segs["midpoint"])
        return segs["kdtree"]


# ---------------------------------------------------------------------------
# Nearest-centerline queries
# ---------------------------------------------------------------------------

def _segment_candidates_exact(
    segs: dict, candidates: np.ndarray, point: np.ndarray
) -> tuple[int, float, float]:
    """Closest point among the given segment indices; returns the winning
    flat index, the clamped parameter, and the distance."""
    a = segs["a"][candidates]
    ab = segs["ab"][candidates]
    ab_sq = segs["ab_sq"][candidates]
    d = point - a
    t = np.clip(np.einsum("ij,ij->i", d, ab) / ab_sq, 0.0, 1.0)
    closest = a + t[:, None] * ab
    dist = np.linalg.norm(point - closest, axis=1)
    # candidates are in (branch_id, seg_index) order, so the first minimum
    # realizes the documented tie-break.
    j = int(np.argmin(dist))
    return int(candidates[j]), float(t[j]), float(dist[j])


def _query_one(tree: AirwayTree, point: np.ndarray, forward: np.ndarray) -> CenterlineQuery:
    segs = tree.segment_arrays()
    n_seg = segs["a"].shape[0]
    if n_seg > _KDTREE_SEGMENT_THRESHOLD:
        kdt = tree._segment_kdtree()
        max_half = float(segs["half_len"].max())
        d_mid, j_mid = kdt.query(point)
        upper = d_mid + segs["half_len"][j_mid]
        idx = kdt.query_ball_point(point, upper + max_half + 1e-9)
        candidates = np.sort(np.asarray(idx, dtype=np.int64))
    else:
        candidates = np.arange(n_seg, dtype=np.int64)
    flat, t, dist = _segment_candidates_exact(segs, candidates, np.asarray(point, dtype=np.float64))

    tangent = segs["ab"][flat] / (2.0 * segs["half_len"][flat])
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    angle = float(np.arccos(np.clip(f @ tangent, -1.0, 1.0)))
    radius = float(segs["ra"][flat] + t * (segs["rb"][flat] - segs["ra"][flat]))
    return CenterlineQuery(
        branch_id=int(segs["branch_id"][flat]),
        distance=dist,
        angle=angle,
        radius=radius,
        seg_index=int(segs["seg_index"][flat]),
        closest_point=segs["a"][flat] + t * segs["ab"][flat],
    )


def nearest_centerline(tree: AirwayTree, point: np.ndarray, forward: np.ndarray) -> CenterlineQuery:
    """Closest centerline point to ``point`` over the whole tree.

    ``forward`` is the camera optical axis in world coordinates; the
    returned angle is measured against the proximal-to-distal tangent of
    the winning segment and lies in [0, pi]. Ties are broken by
    (distance, branch_id, seg_index) so storage order never matters.
    """
    return _query_one(tree, point, forward)


def nearest_centerline_batch(
    tree: AirwayTree, points: np.ndarray, forwards: np.ndarray
) -> dict[str, np.ndarray]:
    """Vectorized nearest-centerline query for many poses at once.

    Returns arrays keyed ``branch_id, distance, angle, radius, generation``,
    each of length N. Matches ``nearest_centerline`` element-wise.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    fwd = np.asarray(forwards, dtype=np.float64).reshape(-1, 3)
    if pts.shape != fwd.shape:
        raise ValueError("points and forwards must have matching shapes")
    segs = tree.segment_arrays()
    n_seg = segs["a"].shape[0]
    if n_seg > _KDTREE_SEGMENT_THRESHOLD:
        out = [_query_one(tree, p, f) for p, f in zip(pts, fwd)]
        gens = np.array([tree.generation_of(q.branch_id) for q in out], dtype=np.int64)
        return {
            "branch_id": np.array([q.branch_id for q in out], dtype=np.int64),
            "distance": np.array([q.distance for q in out]),
            "angle": np.array([q.angle for q in out]),
            "radius": np.array([q.radius for q in out]),
            "generation": gens,
        }

    # (N, S) distance matrix; fine for the segment counts used here.
    a, ab, ab_sq = segs["a"], segs["ab"], segs["ab_sq"]
    d = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nsj,sj->ns", d, ab) / ab_sq[None, :], 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    dist = np.linalg.norm(pts[:, None, :] - closest, axis=2)
    flat = np.argmin(dist, axis=1)  # first minimum == documented tie-break
    rows = np.arange(pts.shape[0])
    t_win = t[rows, flat]
    tangent = ab[flat] / (2.0 * segs["half_len"][flat][:, None])
    f_unit = fwd / np.linalg.norm(fwd, axis=1, keepdims=True)
    cosang = np.clip(np.einsum("nj,nj->n", f_unit, tangent), -1.0, 1.0)
    branch_ids = segs["branch_id"][flat]
    gen_lookup = {b.id: b.generation for b in tree.branches}
    return {
        "branch_id": branch_ids,
        "distance": dist[rows, flat],
        "angle": np.arccos(cosang),
        "radius": segs["ra"][flat] + t_win * (segs["rb"][flat] - segs["ra"][flat]),
        "generation": np.array([gen_lookup[int(i)] for i in branch_ids], dtype=np.int64),
    }


# ---------------------------------------------------------------------------
# Synthetic tree generation
# ---------------------------------------------------------------------------

@dataclass
class TreeGenSpec:
    """Parameters of the recursive binary-branching generator.

    ``generations`` is the index of the deepest generation, so the tree has
    2**(generations+1) - 1 branches (root is generation 0).
    """

    generations: int = 4
    root_length: float = 60.0  # mm
    root_radius: float = 8.0  # mm
    length_decay: float = 0.72
    radius_decay: float = 0.72
    branch_angle: float = math.radians(32.0)  # half-angle at a bifurcation
    angle_jitter: float = math.radians(6.0)
    azimuth_jitter: float = math.radians(15.0)
    vertices_per_branch: int = 9
    cloud_points: int = 400  # surface samples stored per branch

    def __post_init__(self) -> None:
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.root_length <= 0 or self.root_radius <= 0:
            raise ValueError("root dimensions must be positive")
        if not (0.0 < self.length_decay <= 1.0 and 0.0 < self.radius_decay <= 1.0):
            raise ValueError("decay factors must lie in (0, 1]")
        if self.vertices_per_branch < 2:
            raise ValueError("need at least 2 vertices per branch")
        if self.cloud_points < 0:
            raise ValueError("cloud_points must be >= 0")


def _perp_frame(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``t`` to a right-handed frame."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(t[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    n1 = np.cross(t, helper)
    n1 /= np.linalg.norm(n1)
    return n1, np.cross(t, n1)


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of ``v`` about a unit ``axis``."""
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * (axis @ v) * (1.0 - c)


def branch_cloud(
    centerline: np.ndarray, radii: np.ndarray, n_points: int, rng: np.random.Generator
) -> np.ndarray:
    """Random points on the tube surface around a polyline centerline.

    Sampling is uniform in arc length and uniform in circumferential angle;
    end caps are not sampled. Returns an (n_points, 3) array.
    """
    c = np.asarray(centerline, dtype=np.float64)
    r = np.asarray(radii, dtype=np.float64)
    if n_points == 0:
        return np.empty((0, 3))
    seg = np.diff(c, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = rng.uniform(0.0, cum[-1], n_points)
    ang = rng.uniform(0.0, 2.0 * math.pi, n_points)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg_len) - 1)
    t = (s - cum[idx]) / seg_len[idx]
    axis_pt = c[idx] + t[:, None] * seg[idx]
    rad = r[idx] + t * (r[idx + 1] - r[idx])
    out = np.empty((n_points, 3))
    for k in range(n_points):
        tangent = seg[idx[k]] / seg_len[idx[k]]
        n1, n2 = _perp_frame(tangent)
        out[k] = axis_pt[k] + rad[k] * (math.cos(ang[k]) * n1 + math.sin(ang[k]) * n2)
    return out


def generate_tree(spec: TreeGenSpec, rng: np.random.Generator) -> AirwayTree:
    """Grow a binary tree of straight tubes from the given spec.

    The root starts at the origin pointing along +z. Each bifurcation tilts
    the two children by ±(branch_angle + jitter) inside a branching plane
    that is itself rotated about the parent axis by a jittered azimuth, so
    successive generations fan out in 3-D instead of collapsing onto a
    plane. Branch ids follow breadth-first order, which makes generation g
    occupy ids [2**g - 1, 2**(g+1) - 2].
    """
    branches: list[Branch] = []
    # queue entries: (id, parent_id, label, generation, start, direction, plane normal)
    root_dir = np.array([0.0, 0.0, 1.0])
    n1, _ = _perp_frame(root_dir)
    queue = [(0, None, "T", 0, np.zeros(3), root_dir, n1)]
    next_id = 1
    while queue:
        bid, pid, label, gen, start, direction, normal = queue.pop(0)
        length = spec.root_length * spec.length_decay**gen
        radius = spec.root_radius * spec.radius_decay**gen
        m = spec.vertices_per_branch
        ts = np.linspace(0.0, 1.0, m)[:, None]
        centerline = start + ts * (direction * length)
        radii = np.full(m, radius)
        cloud = branch_cloud(centerline, radii, spec.cloud_points, rng)
        branches.append(
            Branch(
                id=bid, label=label, generation=gen, parent_id=pid,
                centerline=centerline, radii=radii, cloud=cloud,
            )
        )
        if gen < spec.generations:
            azimuth = rng.uniform(-spec.azimuth_jitter, spec.azimuth_jitter)
            plane_normal = _rotate_about(normal, direction, azimuth + math.radians(137.5))
            end = centerline[-1]
            for side, sign in (("L", 1.0), ("R", -1.0)):
                theta = spec.branch_angle + rng.uniform(-spec.angle_jitter, spec.angle_jitter)
                child_dir = _rotate_about(direction, plane_normal, sign * theta)
                child_dir /= np.linalg.norm(child_dir)
                child_label = side if label == "T" else label + side
                queue.append((next_id, bid, child_label, gen + 1, end, child_dir, plane_normal))
                next_id += 1
    return AirwayTree(branches, root_id=0)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_tree(tree: AirwayTree, path: str | Path) -> None:
    """Write the tree as JSON (schema documented in the README)."""
    doc = {
        "root_id": tree.root_id,
        "branches": [
            {
                "id": b.id,
                "label": b.label,
                "generation": b.generation,
                "parent_id": b.parent_id,
                "centerline": b.centerline.tolist(),
                "radii": b.radii.tolist(),
                "cloud": b.cloud.tolist(),
            }
            for b in tree.branches
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_tree(path: str | Path) -> AirwayTree:
    doc = json.loads(Path(path).read_text())
    branches = [
        Branch(
            id=int(e["id"]),
            label=str(e["label"]),
            generation=int(e["generation"]),
            parent_id=None if e["parent_id"] is None else int(e["parent_id"]),
            centerline=np.asarray(e["centerline"], dtype=np.float64),
            radii=np.asarray(e["radii"], dtype=np.float64),
            cloud=np.asarray(e["cloud"], dtype=np.float64),
        )
        for e in doc["branches"]
    ]
    return AirwayTree(branches, root_id=int(doc["root_id"]))
