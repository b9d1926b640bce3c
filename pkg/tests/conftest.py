import numpy as np
import pytest

from trajmap.grids import Scene
from trajmap.synthetic import toy_scene_arrays


def build_toy_scene(map_id: int, seed: int = 0, height: int = 64, width: int = 64) -> Scene:
    """In-memory toy Scene matching what load_scene would produce from disk."""
    building, tx, gain_u8 = toy_scene_arrays(map_id, seed, height, width)
    truth = (gain_u8.astype(np.float64) / 255.0).astype(np.float32).astype(np.float64)
    return Scene(map_id=map_id, building=building, tx=tx, truth=truth)


@pytest.fixture
def toy_scene() -> Scene:
    return build_toy_scene(0, seed=11, height=48, width=48)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240810)
