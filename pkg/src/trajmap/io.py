"""Dataset ingestion and bit-exact raster persistence.

Scenes come from per-map grayscale PNGs (building, transmitter, gain).
Observation masks persist as strictly binary 8-bit PNGs. Scalar fields
(guidance, distance maps, predictions) persist in a tiny self-describing
binary format so full precision survives the round trip:

    magic "TGF1" (4 bytes) | height u32-LE | width u32-LE | payload f32-LE row-major

PNG exports of fields are previews only. Gain values are canonicalized to
float32 precision on load so that writing a loaded map through the field
format and reading it back is an exact identity.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from trajmap.grids import Scene, as_grid, as_mask, clamp_unit

logger = logging.getLogger(__name__)

FIELD_MAGIC = b"TGF1"
FIELD_SUFFIX = ".tgf"
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class DatasetLayout:
    """Filesystem layout of a scene dataset.

    Map IDs 0-499 are the training split and 500-700 the test split; the two
    ranges are inclusive and must not overlap. Patterns are relative to root
    and receive `map_id`.
    """

    root: Path
    building_pattern: str = "building/{map_id}.png"
    transmitter_pattern: str = "transmitter/{map_id}.png"
    gain_pattern: str = "gain/{map_id}.png"
    train_range: tuple[int, int] = (0, 499)
    test_range: tuple[int, int] = (500, 700)

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        t0, t1 = self.train_range
        s0, s1 = self.test_range
        if t0 > t1 or s0 > s1:
            raise ValueError("id ranges must be non-decreasing")
        if max(t0, s0) <= min(t1, s1):
            raise ValueError("train and test id ranges overlap")

    def building_path(self, map_id: int) -> Path:
        return self.root / self.building_pattern.format(map_id=map_id)

    def transmitter_path(self, map_id: int) -> Path:
        return self.root / self.transmitter_pattern.format(map_id=map_id)

    def gain_path(self, map_id: int) -> Path:
        return self.root / self.gain_pattern.format(map_id=map_id)

    def train_ids(self) -> range:
        return range(self.train_range[0], self.train_range[1] + 1)

    def test_ids(self) -> range:
        return range(self.test_range[0], self.test_range[1] + 1)

    def has_scene(self, map_id: int) -> bool:
        return (
            self.building_path(map_id).is_file()
            and self.transmitter_path(map_id).is_file()
            and self.gain_path(map_id).is_file()
        )


def _read_gray(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def load_scene(layout: DatasetLayout, map_id: int) -> Scene:
    """Load one scene: binarized building mask, argmax transmitter, unit gain.

    Building pixels are grayscale >= 0.5 of full scale; the transmitter is the
    first (row-major) maximum of its raster; gain is scaled to [0, 1] and
    rounded to float32 precision.
    """
    for path in (
        layout.building_path(map_id),
        layout.transmitter_path(map_id),
        layout.gain_path(map_id),
    ):
        if not path.is_file():
            raise FileNotFoundError(f"missing dataset file: {path}")

    building_raw = _read_gray(layout.building_path(map_id))
    tx_raw = _read_gray(layout.transmitter_path(map_id))
    gain_raw = _read_gray(layout.gain_path(map_id))
    if not building_raw.shape == tx_raw.shape == gain_raw.shape:
        raise ValueError(
            f"map {map_id}: raster dimensions differ "
            f"({building_raw.shape}, {tx_raw.shape}, {gain_raw.shape})"
        )

    building = (building_raw.astype(np.float64) / 255.0) >= 0.5
    if tx_raw.max() == 0:
        raise ValueError(f"map {map_id}: transmitter raster has no positive pixel")
    flat = int(np.argmax(tx_raw))  # first maximum = smallest row-major index
    tx = (flat // tx_raw.shape[1], flat % tx_raw.shape[1])

    gain = clamp_unit(gain_raw.astype(np.float64) / 255.0, what=f"map {map_id} gain")
    gain = gain.astype(np.float32).astype(np.float64)
    return Scene(map_id=map_id, building=building, tx=tx, truth=gain)


def write_mask_png(mask, path) -> None:
    """Persist a mask as 8-bit grayscale PNG, true -> 255 and false -> 0."""
    mask = as_mask(mask)
    img = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L")
    img.save(Path(path), format="PNG")


def read_mask_png(path) -> np.ndarray:
    """Read a strictly binary mask PNG; any value other than 0/255 is an error."""
    arr = _read_gray(Path(path))
    bad = (arr != 0) & (arr != 255)
    if bad.any():
        raise ValueError(
            f"{path}: mask PNG contains non-binary pixel values "
            f"(e.g. {int(arr[bad][0])})"
        )
    return arr == 255


def write_field(values, path) -> None:
    """Persist a scalar field in the binary field format (float32 payload)."""
    values = as_grid(values)
    h, w = values.shape
    payload = values.astype("<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(FIELD_MAGIC, h, w) + payload)


def read_field(path) -> np.ndarray:
    """Read a scalar field written by `write_field` (returned as float64)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated field file")
    magic, h, w = _HEADER.unpack_from(data)
    if magic != FIELD_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + h * w * 4
    if len(data) != expected:
        raise ValueError(
            f"{path}: payload size mismatch (expected {expected} bytes, got {len(data)})"
        )
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    values = values.reshape(h, w).astype(np.float64)
    if not np.isfinite(values).all():
        raise ValueError(f"{path}: field contains non-finite values")
    return values


def write_field_preview(values, path) -> None:
    """8-bit PNG preview of a unit-interval field (value x 255, round-half-up)."""
    values = np.clip(as_grid(values), 0.0, 1.0)
    u8 = np.floor(values * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(Path(path), format="PNG")


def permille_label(rate: float) -> str:
    """Sampling rate as a permille string, e.g. 0.005 -> "5"."""
    return f"{rate * 1000.0:g}"


def mask_filename(map_id: int, rate: float, variant: int, kind: str = "trajectory") -> str:
    """Mask file naming convention: mask_{mapid}_{rate permille}_{variant}.png.

    Random-sampled masks use the prefix `random` instead of `mask`.
    """
    prefix = {"trajectory": "mask", "random": "random"}[kind]
    return f"{prefix}_{map_id}_{permille_label(rate)}_{variant}.png"


def guidance_filename(map_id: int, rate: float, variant: int, component: str = "guide") -> str:
    """Guidance/risk field naming: {component}_{mapid}_{rate permille}_{variant}.tgf."""
    return f"{component}_{map_id}_{permille_label(rate)}_{variant}{FIELD_SUFFIX}"


def prediction_filename(map_id: int, rate: float, variant: int, method: str) -> str:
    """Prediction naming: pred_{mapid}_{rate permille}_{variant}_{method}.tgf."""
    return f"pred_{map_id}_{permille_label(rate)}_{variant}_{method}{FIELD_SUFFIX}"


def parse_prediction_filename(name: str) -> tuple[int, float, int, str]:
    """Invert `prediction_filename`: returns (map_id, rate, variant, method)."""
    stem = name[: -len(FIELD_SUFFIX)] if name.endswith(FIELD_SUFFIX) else name
    parts = stem.split("_")
    if len(parts) < 5 or parts[0] != "pred":
        raise ValueError(f"not a prediction filename: {name}")
    map_id = int(parts[1])
    rate = float(parts[2]) / 1000.0
    variant = int(parts[3])
    method = "_".join(parts[4:])
    return map_id, rate, variant, method


def write_record(path, record: dict) -> None:
    """Persist a sidecar metadata record as sorted-key JSON."""
    Path(path).write_text(json.dumps(record, sort_keys=True) + "\n")


def read_record(path) -> dict:
    return json.loads(Path(path).read_text())
