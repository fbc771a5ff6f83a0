"""Monte-Carlo localization of an endoscopic camera in tubular anatomy.

The package couples a particle filter over SE(3) camera poses with a
synthetic airway simulator whose geometric oracles (depth rendering,
relative odometry, labeled landmark clouds) stand in for learned
perception, so every component can be tested against ground truth.
"""

from airloc.airway import AirwayTree, TreeGenSpec, generate_tree, load_tree, save_tree
from airloc.experiments import (
    ExperimentConfig,
    build_scenario,
    generate_observations,
    run_ablation,
    run_experiment,
    run_filter,
    run_sweep,
)
from airloc.filter import FilterConfig, ParticleSet, initialize, step
from airloc.geometry import (
    CameraModel,
    DepthMap,
    MotionNoise,
    PointCloud,
    Pose,
    PoseDelta,
    compose,
    inverse,
    perturb,
    weighted_mean_pose,
)
from airloc.metrics import TrajectoryReport, ate, build_report, success_rate
from airloc.perception import oracle_landmarks, oracle_odometry, render_depth
from airloc.simulate import InsertionSpec, simulate_trajectory
from airloc.trajectory import Trajectory, load_trajectory_csv, save_trajectory_csv

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "PoseDelta",
    "MotionNoise",
    "CameraModel",
    "PointCloud",
    "DepthMap",
    "compose",
    "inverse",
    "perturb",
    "weighted_mean_pose",
    "AirwayTree",
    "TreeGenSpec",
    "generate_tree",
    "save_tree",
    "load_tree",
    "render_depth",
    "oracle_odometry",
    "oracle_landmarks",
    "FilterConfig",
    "ParticleSet",
    "initialize",
    "step",
    "Trajectory",
    "save_trajectory_csv",
    "load_trajectory_csv",
    "ate",
    "success_rate",
    "build_report",
    "TrajectoryReport",
    "InsertionSpec",
    "simulate_trajectory",
    "ExperimentConfig",
    "build_scenario",
    "generate_observations",
    "run_filter",
    "run_experiment",
    "run_ablation",
    "run_sweep",
    "__version__",
]
