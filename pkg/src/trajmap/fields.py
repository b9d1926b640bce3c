"""Geometric field primitives: exact distance transforms, sight-line blockage
sampling, and Gaussian smoothing.

Distance fields are center-to-center Euclidean distances in pixel units,
computed exactly (integer squared distances, no chamfer approximation).
"""

from __future__ import annotations

import math

import numpy as np

from trajmap.grids import Coord, as_grid, as_mask


def _column_nearest(source: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column vertical distance (in rows) and row of the nearest source.

    Columns without a source get distance H+W, which squared always exceeds
    any true in-grid squared distance, so they never win the row pass.
    Ties between an equally near source above and below prefer the smaller row.
    """
    h, w = source.shape
    big = h + w
    rows = np.arange(h, dtype=np.int64)[:, None]

    idx_above = np.maximum.accumulate(np.where(source, rows, -1), axis=0)
    dist_above = np.where(idx_above >= 0, rows - idx_above, big)

    acc = np.maximum.accumulate(np.where(source[::-1], rows, -1), axis=0)[::-1]
    idx_below = np.where(acc >= 0, h - 1 - acc, -1)
    dist_below = np.where(idx_below >= 0, idx_below - rows, big)

    take_above = dist_above <= dist_below
    return (
        np.where(take_above, dist_above, dist_below),
        np.where(take_above, idx_above, idx_below),
    )


def _envelope_pass(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1-D squared-distance transform via the lower envelope of parabolas.

    Returns min_c (x - c)^2 + f[c] for every x, plus the argmin column. At an
    exact crossing of two parabolas the left (smaller column) one wins.
    """
    n = f.shape[0]
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    z[0] = -np.inf
    z[1] = np.inf
    fq = f + np.arange(n, dtype=np.int64) ** 2
    k = 0
    for q in range(1, n):
        s = (fq[q] - fq[v[k]]) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = (fq[q] - fq[v[k]]) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf

    out = np.empty(n, dtype=np.int64)
    arg = np.empty(n, dtype=np.int64)
    k = 0
    for x in range(n):
        while z[k + 1] < x:
            k += 1
        c = v[k]
        out[x] = (x - c) ** 2 + f[c]
        arg[x] = c
    return out, arg


def _squared_edt(source: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact squared Euclidean distance plus nearest-source coordinates."""
    h, w = source.shape
    col_dist, col_row = _column_nearest(source)
    f2 = col_dist.astype(np.int64) ** 2

    dist2 = np.empty((h, w), dtype=np.int64)
    src_col = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        dist2[r], src_col[r] = _envelope_pass(f2[r])
    src_row = np.take_along_axis(col_row, src_col, axis=1)
    return dist2, src_row, src_col


def euclidean_distance_transform(source) -> np.ndarray:
    """Exact Euclidean distance to the nearest source pixel, per pixel.

    Separable two-pass lower-envelope computation over integer squared
    distances; zero exactly on source pixels.
    """
    source = as_mask(source)
    if not source.any():
        raise ValueError("empty source set")
    dist2, _, _ = _squared_edt(source)
    return np.sqrt(dist2.astype(np.float64))


def nearest_source_transform(source) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact distances plus (row, col) of a nearest source pixel, per pixel.

    Equidistant sources are resolved deterministically: the smaller row wins
    within a column, and at exact parabola crossings the smaller column wins.
    """
    source = as_mask(source)
    if not source.any():
        raise ValueError("empty source set")
    dist2, src_row, src_col = _squared_edt(source)
    return np.sqrt(dist2.astype(np.float64)), src_row, src_col


def boundary_distance(building) -> np.ndarray:
    """Distance to the nearest building boundary pixel.

    The boundary set is the building pixels that face accessible space across
    a 4-neighbor edge or sit on the raster edge. With no buildings at all the
    field is filled with the sentinel H+W, which drives exp(-d/sigma) to ~0.
    """
    building = as_mask(building)
    h, w = building.shape
    if not building.any():
        return np.full((h, w), float(h + w))

    acc = ~building
    padded = np.pad(acc, 1, mode="constant", constant_values=False)
    neighbor_acc = (
        padded[:-2, 1:-1] | padded[2:, 1:-1] | padded[1:-1, :-2] | padded[1:-1, 2:]
    )
    edge = np.zeros((h, w), dtype=bool)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    boundary = building & (neighbor_acc | edge)
    return euclidean_distance_transform(boundary)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    # half-integers round toward the larger index
    return np.floor(x + 0.5).astype(np.intp)


def line_blockage_fraction(building, tx: Coord, p: Coord, n_samples: int) -> float:
    """Fraction of midpoint samples on the segment tx->p that hit buildings.

    Samples at t = (n - 0.5) / n_samples for n = 1..n_samples, each rounded to
    the nearest pixel (half-up).
    """
    building = as_mask(building)
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    t = (np.arange(1, n_samples + 1, dtype=np.float64) - 0.5) / n_samples
    rr = _round_half_up(tx[0] + t * (p[0] - tx[0]))
    cc = _round_half_up(tx[1] + t * (p[1] - tx[1]))
    return float(building[rr, cc].mean())


def line_blockage_field(building, tx: Coord, n_samples: int) -> np.ndarray:
    """Blockage fraction toward every pixel at once.

    Midpoint sample coordinates separate per axis (the row of a sample depends
    only on the target row), so each sample index is one fancy-indexed lookup.
    """
    building = as_mask(building)
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    h, w = building.shape
    dr = np.arange(h, dtype=np.float64)[:, None] - tx[0]
    dc = np.arange(w, dtype=np.float64)[None, :] - tx[1]
    acc = np.zeros((h, w), dtype=np.float64)
    for n in range(1, n_samples + 1):
        t = (n - 0.5) / n_samples
        rr = _round_half_up(tx[0] + t * dr)
        cc = _round_half_up(tx[1] + t * dc)
        acc += building[rr, cc]
    return acc / n_samples


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3*sigma)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1, dtype=np.float64)
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _smooth_axis1(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    radius = kernel.shape[0] // 2
    padded = np.pad(values, ((0, 0), (radius, radius)), mode="edge")
    out = np.zeros_like(values)
    for j, weight in enumerate(kernel):
        out += weight * padded[:, j : j + values.shape[1]]
    return out


def gaussian_smooth(values, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with replicate borders; sigma 0 is identity.

    The normalized kernel plus replicate padding makes every output pixel a
    convex combination of inputs, so the value range is preserved.
    """
    values = as_grid(values)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return values.copy()
    kernel = gaussian_kernel(sigma)
    out = _smooth_axis1(values, kernel)
    return _smooth_axis1(out.T, kernel).T
