"""Core raster types, condition assembly, and the observation hard constraint.

Rasters are plain 2-D numpy arrays: float64 for scalar fields ("grid maps"),
bool for masks ("bit masks"). Normalized fields (ground truth, sampled
values, guidance) live in [0, 1]; distance fields are in pixel units.
Coordinates are (row, col) pairs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

Coord = tuple[int, int]


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = arr.copy()
    out.flags.writeable = False
    return out


def as_grid(values, unit: bool = False) -> np.ndarray:
    """Validate a scalar field: non-empty 2-D, finite, optionally within [0, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"grid must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("grid contains non-finite values")
    if unit and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(
            f"grid values outside [0, 1]: min {arr.min():.6g}, max {arr.max():.6g}"
        )
    return arr


def as_mask(bits) -> np.ndarray:
    """Validate a boolean raster: non-empty 2-D."""
    arr = np.asarray(bits)
    if arr.dtype != np.bool_:
        arr = arr.astype(bool)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"mask must be a non-empty 2-D array, got shape {arr.shape}")
    return arr


def clamp_unit(values: np.ndarray, what: str = "grid") -> np.ndarray:
    """Clamp a field to [0, 1], warning if anything was actually out of range.

    Ingest tolerance for dataset quantization noise; validated pipelines never
    trigger the warning.
    """
    lo = float(values.min())
    hi = float(values.max())
    if lo < 0.0 or hi > 1.0:
        logger.warning(
            "%s values outside [0, 1] (min %.6g, max %.6g); clamping", what, lo, hi
        )
        return np.clip(values, 0.0, 1.0)
    return values


def tx_onehot(shape: tuple[int, int], tx: Coord) -> np.ndarray:
    """Render a transmitter coordinate as a one-hot boolean raster."""
    r, c = tx
    if not (0 <= r < shape[0] and 0 <= c < shape[1]):
        raise ValueError(f"transmitter {tx} outside raster bounds {shape}")
    out = np.zeros(shape, dtype=bool)
    out[r, c] = True
    return out


@dataclass(frozen=True)
class Scene:
    """One dataset entry: building occupancy, transmitter location, ground truth.

    All rasters share identical dimensions and the transmitter lies in bounds;
    the ground truth is a unit-interval field. Arrays are stored read-only.
    """

    map_id: int
    building: np.ndarray
    tx: Coord
    truth: np.ndarray

    def __post_init__(self):
        building = as_mask(self.building)
        truth = as_grid(self.truth, unit=True)
        if building.shape != truth.shape:
            raise ValueError(
                f"building {building.shape} and truth {truth.shape} dimensions differ"
            )
        r, c = self.tx
        if not (0 <= r < building.shape[0] and 0 <= c < building.shape[1]):
            raise ValueError(f"transmitter {self.tx} outside raster bounds")
        object.__setattr__(self, "building", _readonly(building))
        object.__setattr__(self, "truth", _readonly(truth))
        object.__setattr__(self, "tx", (int(r), int(c)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.building.shape

    @property
    def accessible(self) -> np.ndarray:
        return ~self.building


@dataclass(frozen=True)
class ConditionStack:
    """Reconstruction condition: building, transmitter, mask, samples, guidance.

    Plane order is [building, tx, mask, samples] plus the optional guidance
    plane appended last. `samples` is zero off-mask.
    """

    building: np.ndarray
    tx_onehot: np.ndarray
    mask: np.ndarray
    samples: np.ndarray
    guidance: np.ndarray | None = None

    def __post_init__(self):
        shape = self.building.shape
        for name in ("tx_onehot", "mask", "samples"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} dimensions differ from building {shape}")
        if self.guidance is not None and self.guidance.shape != shape:
            raise ValueError(f"guidance dimensions differ from building {shape}")

    def planes(self) -> np.ndarray:
        """Stack the condition as a (4|5, H, W) float array."""
        layers = [
            self.building.astype(np.float64),
            self.tx_onehot.astype(np.float64),
            self.mask.astype(np.float64),
            self.samples,
        ]
        if self.guidance is not None:
            layers.append(self.guidance)
        return np.stack(layers)


def sampling_budget(building, rate: float) -> int:
    """Observation budget: round-half-up of rate x accessible (non-building) pixels."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"sampling rate must be in (0, 1], got {rate}")
    accessible = int((~as_mask(building)).sum())
    if accessible == 0:
        raise ValueError("no accessible area")
    return int(math.floor(rate * accessible + 0.5))


def apply_samples(truth, mask) -> np.ndarray:
    """Sampled value map: truth on mask pixels, zero elsewhere."""
    truth = as_grid(truth)
    mask = as_mask(mask)
    if truth.shape != mask.shape:
        raise ValueError(f"truth {truth.shape} and mask {mask.shape} dimensions differ")
    return np.where(mask, truth, 0.0)


def hard_constraint(prediction, mask, samples) -> np.ndarray:
    """Overwrite predicted values with observed samples at mask pixels.

    A projection: applying it twice equals applying it once.
    """
    prediction = as_grid(prediction)
    mask = as_mask(mask)
    samples = as_grid(samples)
    if not prediction.shape == mask.shape == samples.shape:
        raise ValueError("prediction, mask, and samples dimensions differ")
    if np.any(samples[~mask] != 0.0):
        raise ValueError("samples must be zero off-mask")
    return np.where(mask, samples, prediction)


def assemble_condition(scene: Scene, mask, guidance=None) -> ConditionStack:
    """Build the condition stack for a scene and observation mask.

    The mask must avoid building pixels; samples are derived from the scene
    truth, so mask pixels carry the exact truth value.
    """
    mask = as_mask(mask)
    if mask.shape != scene.shape:
        raise ValueError(f"mask {mask.shape} and scene {scene.shape} dimensions differ")
    if np.any(mask & scene.building):
        raise ValueError("observation mask overlaps building pixels")
    samples = apply_samples(scene.truth, mask)
    if guidance is not None:
        guidance = as_grid(guidance, unit=True)
        if guidance.shape != scene.shape:
            raise ValueError("guidance dimensions differ from scene")
    return ConditionStack(
        building=_readonly(scene.building),
        tx_onehot=_readonly(tx_onehot(scene.shape, scene.tx)),
        mask=_readonly(mask),
        samples=_readonly(samples),
        guidance=None if guidance is None else _readonly(guidance),
    )
