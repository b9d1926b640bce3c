"""Explicit reconstruction-risk guidance target and its evaluation loss.

The target fuses three unit-interval risk cues over accessible pixels:

  * distance risk   1 - exp(-d_traj / sigma_d)   grows away from observations
  * boundary risk   exp(-d_edge / sigma_e)       peaks at building boundaries
  * occlusion risk  blockage fraction of the transmitter sight line

The weighted sum is clipped to [0, 1], zeroed on buildings, Gaussian
smoothed, then clipped and zeroed again, in exactly that order. The guidance
loss scores an externally produced guidance map against the target as the
mean absolute difference over non-building pixels (mean rather than sum so
values are comparable across map sizes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from trajmap.fields import (
    boundary_distance,
    euclidean_distance_transform,
    gaussian_smooth,
    line_blockage_field,
)
from trajmap.grids import Coord, Scene, as_grid, as_mask


@dataclass(frozen=True)
class RiskParams:
    """Risk-fusion hyperparameters: scales, sight-line sample count, weights."""

    sigma_d: float = 16.0
    sigma_e: float = 5.0
    sigma_s: float = 1.0
    n_occlusion_samples: int = 64
    w_d: float = 0.6
    w_e: float = 0.25
    w_o: float = 0.15

    def __post_init__(self):
        if self.sigma_d <= 0 or self.sigma_e <= 0:
            raise ValueError("sigma_d and sigma_e must be > 0")
        if self.sigma_s < 0:
            raise ValueError("sigma_s must be >= 0")
        if self.n_occlusion_samples < 1:
            raise ValueError("n_occlusion_samples must be >= 1")
        if min(self.w_d, self.w_e, self.w_o) < 0:
            raise ValueError("risk weights must be >= 0")


@dataclass(frozen=True)
class RiskDecomposition:
    """Per-component risk maps plus the fused and smoothed guidance target."""

    r_distance: np.ndarray
    r_boundary: np.ndarray
    r_occlusion: np.ndarray
    fused_raw: np.ndarray
    target: np.ndarray


def distance_risk(d_tau, sigma_d: float) -> np.ndarray:
    """Risk of being far from the nearest observation: 1 - exp(-d/sigma_d)."""
    if sigma_d <= 0:
        raise ValueError(f"sigma_d must be > 0, got {sigma_d}")
    return 1.0 - np.exp(-as_grid(d_tau) / sigma_d)


def boundary_risk(d_e, sigma_e: float) -> np.ndarray:
    """Risk of proximity to building boundaries: exp(-d/sigma_e)."""
    if sigma_e <= 0:
        raise ValueError(f"sigma_e must be > 0, got {sigma_e}")
    return np.exp(-as_grid(d_e) / sigma_e)


def occlusion_risk(building, tx: Coord, n_samples: int) -> np.ndarray:
    """Transmitter-to-pixel blockage fraction, zeroed on building pixels."""
    building = as_mask(building)
    open_mask = (~building).astype(np.float64)
    return open_mask * line_blockage_field(building, tx, n_samples)


def guidance_target(scene: Scene, mask, params: RiskParams = RiskParams()) -> RiskDecomposition:
    """Fused risk target for one scene and observation mask.

    Both clip stages and both building maskings are applied verbatim (the
    first clip is a no-op whenever the weights sum to at most one).
    """
    mask = as_mask(mask)
    if mask.shape != scene.shape:
        raise ValueError(f"mask {mask.shape} and scene {scene.shape} dimensions differ")
    if not mask.any():
        raise ValueError("empty trajectory mask: distance field undefined")
    if np.any(mask & scene.building):
        raise ValueError("observation mask overlaps building pixels")

    r_d = distance_risk(euclidean_distance_transform(mask), params.sigma_d)
    r_e = boundary_risk(boundary_distance(scene.building), params.sigma_e)
    r_o = occlusion_risk(scene.building, scene.tx, params.n_occlusion_samples)

    open_mask = (~scene.building).astype(np.float64)
    fused = params.w_d * r_d + params.w_e * r_e + params.w_o * r_o
    fused_raw = np.clip(fused, 0.0, 1.0) * open_mask
    target = np.clip(gaussian_smooth(fused_raw, params.sigma_s), 0.0, 1.0) * open_mask
    return RiskDecomposition(
        r_distance=r_d,
        r_boundary=r_e,
        r_occlusion=r_o,
        fused_raw=fused_raw,
        target=target,
    )


def guidance_loss(predicted, target, building) -> float:
    """Mean absolute guidance error over non-building pixels."""
    predicted = as_grid(predicted)
    target = as_grid(target)
    building = as_mask(building)
    if not predicted.shape == target.shape == building.shape:
        raise ValueError("predicted, target, and building dimensions differ")
    open_pixels = ~building
    if not open_pixels.any():
        raise ValueError("no non-building pixels to evaluate")
    return float(np.abs(predicted - target)[open_pixels].mean())
