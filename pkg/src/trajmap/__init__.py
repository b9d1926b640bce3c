"""Toolkit for trajectory-sampled radio map reconstruction experiments.

Generates trajectory and random observation masks over building-constrained
radio maps, computes an explicit reconstruction-risk guidance target from
distance, boundary, and occlusion cues, reconstructs sparse maps with
classical model-free baselines, and evaluates any reconstruction with a
masked metric suite (MAE / RMSE / NMSE / PSNR / SSIM plus observation and
guidance losses).
"""

from trajmap.grids import (
    ConditionStack,
    Scene,
    apply_samples,
    assemble_condition,
    hard_constraint,
    sampling_budget,
)
from trajmap.guidance import RiskParams, guidance_loss, guidance_target
from trajmap.metrics import MetricReport, aggregate, masked_errors, obs_loss, psnr, ssim
from trajmap.baselines import ReconConfig, reconstruct
from trajmap.trajectory import (
    TrajectorySpec,
    astar_path,
    generate_random_mask,
    generate_trajectory_mask,
)

__version__ = "0.1.0"

__all__ = [
    "ConditionStack",
    "MetricReport",
    "ReconConfig",
    "RiskParams",
    "Scene",
    "TrajectorySpec",
    "aggregate",
    "apply_samples",
    "assemble_condition",
    "astar_path",
    "generate_random_mask",
    "generate_trajectory_mask",
    "guidance_loss",
    "guidance_target",
    "hard_constraint",
    "masked_errors",
    "obs_loss",
    "psnr",
    "reconstruct",
    "sampling_budget",
    "ssim",
]
