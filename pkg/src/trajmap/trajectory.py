"""Trajectory and random observation-mask synthesis with deterministic seeding.

A mask instance is identified by (map_id, rate, variant, global_seed); the
per-instance random stream is derived with a SplitMix-style 64-bit mixer, so
regeneration is bitwise reproducible. Trajectory masks chain shortest
8-connected collision-free paths between uniformly drawn accessible waypoints
until the observation budget is met exactly.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from trajmap.grids import Coord, Scene, as_mask, sampling_budget

logger = logging.getLogger(__name__)

MAX_VARIANTS = 8
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_SQRT2 = math.sqrt(2.0)

# row-major neighbor order fixes tie-breaking in the search
_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))

# consecutive draws allowed to make no progress before the generator gives up
RETRY_CAP = 1000


class Unreachable(RuntimeError):
    """No collision-free path exists between the requested endpoints."""


@dataclass(frozen=True)
class TrajectorySpec:
    """Seed-derived description of one mask instance."""

    map_id: int
    rate: float
    variant: int
    global_seed: int

    def __post_init__(self):
        if self.map_id < 0:
            raise ValueError(f"map_id must be >= 0, got {self.map_id}")
        if not 0.0 < self.rate <= 1.0:
            raise ValueError(f"rate must be in (0, 1], got {self.rate}")
        if not 0 <= self.variant < MAX_VARIANTS:
            raise ValueError(
                f"variant must be in [0, {MAX_VARIANTS}), got {self.variant}"
            )


def _mix64(x: int) -> int:
    """SplitMix64 finalizer: bijective avalanche over 64-bit integers."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def derive_stream_seed(spec: TrajectorySpec) -> int:
    """Mix (global_seed, map_id, rate in ppm, variant) into one 64-bit seed.

    Chained SplitMix64 finalizers; distinct specs collide only with
    probability ~2^-64. The rate enters as an integer part-per-million count.
    """
    h = _mix64(spec.global_seed)
    rate_ppm = int(round(spec.rate * 1_000_000))
    for value in (spec.map_id, rate_ppm, spec.variant):
        h = _mix64(h ^ _mix64((value + _GOLDEN) & _MASK64))
    return h


def _octile(a: Coord, b: Coord) -> float:
    dr = abs(a[0] - b[0])
    dc = abs(a[1] - b[1])
    return max(dr, dc) + (_SQRT2 - 1.0) * min(dr, dc)


def path_cost(path: list[Coord]) -> float:
    """Octile cost of an 8-connected path: straight steps 1, diagonals sqrt(2).

    Computed canonically as straight_count + diag_count * sqrt(2) so equal-cost
    paths compare bit-identically.
    """
    straight = diagonal = 0
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        if r0 != r1 and c0 != c1:
            diagonal += 1
        else:
            straight += 1
    return straight + diagonal * _SQRT2


def astar_path(building, start: Coord, goal: Coord) -> list[Coord]:
    """Shortest 8-connected collision-free path under octile step costs.

    Deterministic: neighbors expand in row-major order and heap ties fall back
    to insertion order. Raises `Unreachable` when the goal is disconnected.
    """
    building = as_mask(building)
    h, w = building.shape
    for name, (r, c) in (("start", start), ("goal", goal)):
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"{name} {(r, c)} outside raster bounds")
        if building[r, c]:
            raise ValueError(f"{name} {(r, c)} lies on a building pixel")
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    if start == goal:
        return [start]

    g = np.full((h, w), np.inf)
    g[start] = 0.0
    parent = np.full((h, w), -1, dtype=np.int64)
    closed = np.zeros((h, w), dtype=bool)
    counter = 0
    heap = [(_octile(start, goal), counter, start[0], start[1])]
    while heap:
        _, _, r, c = heapq.heappop(heap)
        if closed[r, c]:
            continue
        closed[r, c] = True
        if (r, c) == goal:
            path = [goal]
            while path[-1] != start:
                flat = int(parent[path[-1]])
                path.append((flat // w, flat % w))
            path.reverse()
            return path
        base = g[r, c]
        for dr, dc in _NEIGHBORS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                continue
            if building[nr, nc] or closed[nr, nc]:
                continue
            step = _SQRT2 if dr != 0 and dc != 0 else 1.0
            tentative = base + step
            if tentative < g[nr, nc]:
                g[nr, nc] = tentative
                parent[nr, nc] = r * w + c
                counter += 1
                heapq.heappush(
                    heap, (tentative + _octile((nr, nc), goal), counter, nr, nc)
                )
    raise Unreachable("disconnected")


def _draw_pixel(rng: np.random.Generator, accessible_flat: np.ndarray, width: int) -> Coord:
    flat = int(accessible_flat[int(rng.integers(accessible_flat.size))])
    return flat // width, flat % width


def generate_trajectory_mask(scene: Scene, spec: TrajectorySpec) -> np.ndarray:
    """Union of chained A* paths between random accessible waypoints.

    Each path starts at the previous path's endpoint; the final path is
    truncated pixel-by-pixel so the mask popcount exactly equals the sampling
    budget. Unreachable waypoints are redrawn; after RETRY_CAP consecutive
    draws without progress (unreachable or fully retraced paths) the
    accessible region is considered too fragmented and the generation fails.
    """
    building = scene.building
    h, w = building.shape
    accessible_flat = np.flatnonzero(~building)
    budget = sampling_budget(building, spec.rate)
    if budget > accessible_flat.size:
        raise ValueError("budget exceeds accessible pixel count")

    mask = np.zeros((h, w), dtype=bool)
    if budget == 0:
        return mask

    rng = np.random.default_rng(derive_stream_seed(spec))
    current = _draw_pixel(rng, accessible_flat, w)
    mask[current] = True
    count = 1
    stalls = 0
    while count < budget:
        goal = _draw_pixel(rng, accessible_flat, w)
        try:
            path = astar_path(building, current, goal)
        except Unreachable:
            stalls += 1
            if stalls >= RETRY_CAP:
                raise RuntimeError(
                    f"accessible region too fragmented: no reachable waypoint "
                    f"after {RETRY_CAP} redraws (map {spec.map_id})"
                )
            continue
        added = 0
        for pixel in path:
            if not mask[pixel]:
                mask[pixel] = True
                count += 1
                added += 1
                if count == budget:
                    logger.debug(
                        "map %d rate %g variant %d: final path truncated at budget %d",
                        spec.map_id, spec.rate, spec.variant, budget,
                    )
                    break
        if added == 0:
            stalls += 1
            if stalls >= RETRY_CAP:
                raise RuntimeError(
                    f"accessible region too fragmented: budget {budget} not "
                    f"reachable from the current component (map {spec.map_id})"
                )
        else:
            stalls = 0
        current = goal
    return mask


def generate_random_mask(scene: Scene, spec: TrajectorySpec) -> np.ndarray:
    """Uniform without-replacement selection of accessible pixels.

    Implemented as a seeded shuffle of the row-major accessible-pixel index
    list, truncated to the budget.
    """
    building = scene.building
    accessible_flat = np.flatnonzero(~building)
    budget = sampling_budget(building, spec.rate)
    if budget > accessible_flat.size:
        raise ValueError("budget exceeds accessible pixel count")

    rng = np.random.default_rng(derive_stream_seed(spec))
    chosen = rng.permutation(accessible_flat)[:budget]
    mask = np.zeros(building.shape, dtype=bool)
    mask.flat[chosen] = True
    return mask
