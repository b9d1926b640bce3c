"""Built-in synthetic dataset so the full pipeline runs without real data.

Each toy scene places a few random rectangular buildings on an otherwise open
grid, drops a transmitter on an accessible pixel, and uses a radial
exponential-decay field (zeroed inside buildings) as ground truth. Scenes are
regenerated with a bumped sub-seed until the accessible region forms a single
8-connected component, which keeps waypoints mutually reachable.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage

from trajmap.io import DatasetLayout
from PIL import Image

logger = logging.getLogger(__name__)

_CONNECT8 = np.ones((3, 3), dtype=bool)


def toy_scene_arrays(
    map_id: int, global_seed: int = 0, height: int = 64, width: int = 64
) -> tuple[np.ndarray, tuple[int, int], np.ndarray]:
    """Deterministic toy scene: (building mask, tx, 8-bit gain raster)."""
    if height < 12 or width < 12:
        raise ValueError("toy scenes need at least 12x12 pixels")
    for attempt in range(50):
        rng = np.random.default_rng([global_seed, map_id, attempt, 0x70B1])
        building = np.zeros((height, width), dtype=bool)
        for _ in range(int(rng.integers(3, 7))):
            rh = int(rng.integers(4, max(5, height // 4)))
            rw = int(rng.integers(4, max(5, width // 4)))
            r0 = int(rng.integers(2, height - rh - 1))
            c0 = int(rng.integers(2, width - rw - 1))
            building[r0 : r0 + rh, c0 : c0 + rw] = True
        accessible = ~building
        _, n_components = ndimage.label(accessible, structure=_CONNECT8)
        if n_components == 1:
            break
    else:
        logger.warning("toy map %d: falling back to an open scene", map_id)
        building = np.zeros((height, width), dtype=bool)
        accessible = ~building
        rng = np.random.default_rng([global_seed, map_id, 50, 0x70B1])

    acc_flat = np.flatnonzero(accessible)
    tx_flat = int(acc_flat[int(rng.integers(acc_flat.size))])
    tx = (tx_flat // width, tx_flat % width)

    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    dist = np.hypot(rows - tx[0], cols - tx[1])
    gain = np.exp(-dist / (0.25 * (height + width)))
    gain[building] = 0.0
    gain_u8 = np.floor(gain * 255.0 + 0.5).astype(np.uint8)
    return building, tx, gain_u8


def write_toy_dataset(
    layout: DatasetLayout,
    n_maps: int,
    global_seed: int = 0,
    height: int = 64,
    width: int = 64,
    force: bool = False,
) -> int:
    """Write toy scene PNGs for map IDs 0..n_maps-1; returns maps written."""
    written = 0
    for map_id in range(n_maps):
        paths = (
            layout.building_path(map_id),
            layout.transmitter_path(map_id),
            layout.gain_path(map_id),
        )
        if not force and all(p.is_file() for p in paths):
            continue
        building, tx, gain_u8 = toy_scene_arrays(map_id, global_seed, height, width)
        tx_raster = np.zeros((height, width), dtype=np.uint8)
        tx_raster[tx] = 255
        for path, raster in zip(
            paths, (np.where(building, 255, 0).astype(np.uint8), tx_raster, gain_u8)
        ):
            path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(raster, mode="L").save(path, format="PNG")
        written += 1
    if written:
        logger.info("toy dataset: wrote %d scenes under %s", written, layout.root)
    return written
