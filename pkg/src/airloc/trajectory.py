"""Timestamped pose sequences and their on-disk CSV form.

A trajectory is stored as flat arrays (times, quaternions, translations)
rather than a list of Pose objects so that metric code can stay
vectorized.  The CSV schema is one row per frame with header

    t,x,y,z,qw,qx,qy,qz

translations in millimetres, poses camera-to-world, quaternions unit and
scalar-first.  Floats are written with ``repr`` so a file round-trips
bit-exactly and two runs that produce the same numbers produce the same
bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .geometry import Pose

_HEADER = ["t", "x", "y", "z", "qw", "qx", "qy", "qz"]


@dataclass
class Trajectory:
    times: np.ndarray  # (T,)
    quats: np.ndarray  # (T, 4) scalar-first, unit
    trans: np.ndarray  # (T, 3) mm

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.quats = np.asarray(self.quats, dtype=float)
        self.trans = np.asarray(self.trans, dtype=float)
        n = self.times.shape[0]
        if self.quats.shape != (n, 4) or self.trans.shape != (n, 3):
            raise ValueError("times, quats and trans must agree in length")
        if n == 0:
            raise ValueError("empty trajectory")
        if not (np.all(np.isfinite(self.quats)) and np.all(np.isfinite(self.trans))):
            raise ValueError("non-finite pose entries")
        norms = np.linalg.norm(self.quats, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise ValueError("zero-norm quaternion")
        self.quats = self.quats / norms

    def __len__(self) -> int:
        return self.times.shape[0]

    def pose(self, i: int) -> Pose:
        return Pose(self.quats[i], self.trans[i])

    def poses(self) -> Iterator[Pose]:
        for i in range(len(self)):
            yield self.pose(i)

    @classmethod
    def from_poses(cls, poses: list[Pose], times=None) -> "Trajectory":
        if times is None:
            times = np.arange(len(poses), dtype=float)
        return cls(
            np.asarray(times, dtype=float),
            np.stack([p.quaternion for p in poses]),
            np.stack([p.translation for p in poses]),
        )

    def save_csv(self, path: str | Path) -> None:
        save_trajectory_csv(self, path)

    @classmethod
    def load_csv(cls, path: str | Path) -> "Trajectory":
        return load_trajectory_csv(path)


def save_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_HEADER)
        for i in range(len(traj)):
            t = traj.times[i]
            x, y, z = traj.trans[i]
            qw, qx, qy, qz = traj.quats[i]
            w.writerow([repr(float(v)) for v in (t, x, y, z, qw, qx, qy, qz)])


def load_trajectory_csv(path: str | Path) -> Trajectory:
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _HEADER:
            raise ValueError(f"{path}: expected header {','.join(_HEADER)}")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no pose rows")
    data = np.asarray(rows, dtype=float)
    if data.shape[1] != 8:
        raise ValueError(f"{path}: rows must have 8 columns")
    return Trajectory(data[:, 0], data[:, 4:8], data[:, 1:4])
