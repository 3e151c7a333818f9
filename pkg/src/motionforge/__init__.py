"""Scene-aware human motion synthesis toolkit.

Masked autoregressive diffusion over body-joint sequences conditioned on a
local occupancy grid and frame-wise action-progress labels, with the
surrounding pipelines: CCD-IK motion augmentation with bounded target
smoothness, contact annotation and penetration statistics, dynamic-object
pose refinement, grid path planning with incremental real-time sampling,
adaptive camera tracking, and a streaming steering service.
"""

from .denoiser import Denoiser, DenoiserConfig, load_checkpoint, save_checkpoint
from .diffusion import (DiffusionSchedule, EpisodeSpec, JointGoal,
                        NavigationGoal, default_schedule, forward_noise,
                        generate_long, make_schedule, sample_episode,
                        training_loss)
from .kinematics import (Pose, RotationLimits, Skeleton, ccd_ik_solve,
                         default_skeleton, forward_kinematics, rot6d_to_matrix)
from .scene import OccupancyGrid, encode_scene, patchify, query_local_grid, voxelize

__version__ = "0.1.0"

__all__ = [
    "Denoiser", "DenoiserConfig", "load_checkpoint", "save_checkpoint",
    "DiffusionSchedule", "EpisodeSpec", "JointGoal", "NavigationGoal",
    "default_schedule", "forward_noise", "generate_long", "make_schedule",
    "sample_episode", "training_loss",
    "Pose", "RotationLimits", "Skeleton", "ccd_ik_solve", "default_skeleton",
    "forward_kinematics", "rot6d_to_matrix",
    "OccupancyGrid", "encode_scene", "patchify", "query_local_grid",
    "voxelize",
    "__version__",
]
