"""Classical model-free reconstructors from sparse observations.

All three methods interpolate (sampled pixels keep their value exactly),
stay within the sample min/max range on accessible pixels, and write 0 at
building pixels. The Laplace method performs harmonic inpainting: the
discrete Laplace equation on unknown accessible pixels with Dirichlet data
at samples, homogeneous Neumann behavior at building/border edges (missing
neighbors are dropped from the stencil), solved by Jacobi-preconditioned
conjugate gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.spatial import cKDTree

from trajmap.fields import nearest_source_transform
from trajmap.grids import Scene, apply_samples, as_grid, as_mask, hard_constraint

logger = logging.getLogger(__name__)

METHODS = ("nearest", "idw", "laplace")

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class ConvergenceError(RuntimeError):
    """Conjugate gradient failed to reach the requested residual."""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"conjugate gradient did not converge: relative residual "
            f"{residual:.3e} after {iterations} iterations"
        )


@dataclass(frozen=True)
class ReconConfig:
    method: str = "laplace"
    idw_power: float = 2.0
    idw_k: int = 8
    cg_tolerance: float = 1e-8
    cg_max_iters: int = 10000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.idw_power <= 0:
            raise ValueError("idw_power must be > 0")
        if self.idw_k < 1:
            raise ValueError("idw_k must be >= 1")
        if self.cg_tolerance <= 0:
            raise ValueError("cg_tolerance must be > 0")
        if self.cg_max_iters < 1:
            raise ValueError("cg_max_iters must be >= 1")


def _check_inputs(samples, mask, building):
    samples = as_grid(samples)
    mask = as_mask(mask)
    building = as_mask(building)
    if not samples.shape == mask.shape == building.shape:
        raise ValueError("samples, mask, and building dimensions differ")
    if not mask.any():
        raise ValueError("empty observation mask")
    if np.any(mask & building):
        raise ValueError("observation mask overlaps building pixels")
    return samples, mask, building


def reconstruct_nearest(samples, mask, building) -> np.ndarray:
    """Assign each accessible pixel the value of its Euclidean-nearest sample.

    Reuses the exact distance-transform machinery with nearest-source
    tracking; equidistant samples resolve deterministically (see
    `nearest_source_transform`), which on a 1-D strip means the leftmost
    sample wins up to the midpoint.
    """
    samples, mask, building = _check_inputs(samples, mask, building)
    _, src_row, src_col = nearest_source_transform(mask)
    out = samples[src_row, src_col]
    out[building] = 0.0
    return out


def _knn_dense(targets: np.ndarray, points: np.ndarray, k: int, chunk: int = 4096):
    """Exact k nearest samples by dense composite-key scan (small problems)."""
    n_samples = points.shape[0]
    dist2 = np.empty((targets.shape[0], k), dtype=np.int64)
    idx = np.empty((targets.shape[0], k), dtype=np.int64)
    order = np.arange(n_samples, dtype=np.int64)
    for lo in range(0, targets.shape[0], chunk):
        block = targets[lo : lo + chunk]
        dr = block[:, 0:1] - points[None, :, 0]
        dc = block[:, 1:2] - points[None, :, 1]
        d2 = dr * dr + dc * dc
        key = d2 * n_samples + order[None, :]
        if k < n_samples:
            part = np.argpartition(key, k - 1, axis=1)[:, :k]
        else:
            part = np.broadcast_to(order, (block.shape[0], n_samples)).copy()
        part_key = np.take_along_axis(key, part, axis=1)
        inner = np.argsort(part_key, axis=1)
        chosen = np.take_along_axis(part, inner, axis=1)
        idx[lo : lo + chunk] = chosen
        dist2[lo : lo + chunk] = np.take_along_axis(d2, chosen, axis=1)
    return dist2, idx


def _knn_samples(
    targets: np.ndarray, points: np.ndarray, k: int, use_tree: bool | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """k nearest sample points per target pixel, exact squared distances.

    Ties at the k-th neighbor resolve toward the smaller row-major sample
    index via a composite (distance, index) key, so results are reproducible.
    Large problems go through a k-d tree; rows where a tie straddles the
    candidate horizon fall back to the dense scan, keeping the selection
    identical to the dense path everywhere.
    """
    n_samples = points.shape[0]
    if use_tree is None:
        use_tree = targets.shape[0] * n_samples > 2_000_000
    if not use_tree or k >= n_samples:
        return _knn_dense(targets, points, k)

    kq = min(n_samples, k + 4)
    dist, idx = cKDTree(points).query(targets, k=kq)
    d2 = np.rint(dist * dist).astype(np.int64)  # squared integer distances
    key = d2 * n_samples + idx
    order = np.argsort(key, axis=1)[:, :k]
    chosen_idx = np.take_along_axis(idx, order, axis=1)
    chosen_d2 = np.take_along_axis(d2, order, axis=1)

    if kq < n_samples:
        # a sample beyond the kq candidates can only matter if it ties the
        # canonical k-th distance, i.e. when that distance reaches the horizon
        flagged = np.flatnonzero(chosen_d2[:, -1] == d2[:, -1])
        if flagged.size:
            fixed_d2, fixed_idx = _knn_dense(targets[flagged], points, k)
            chosen_d2[flagged] = fixed_d2
            chosen_idx[flagged] = fixed_idx
    return chosen_d2, chosen_idx


def reconstruct_idw(samples, mask, building, cfg: ReconConfig) -> np.ndarray:
    """Inverse-distance-weighted interpolation over the k nearest samples.

    Sampled pixels keep their value exactly; k is clamped to the available
    sample count; k = 1 reduces to nearest-sample assignment and reuses that
    method so the two agree bitwise.
    """
    samples, mask, building = _check_inputs(samples, mask, building)
    k = min(cfg.idw_k, int(mask.sum()))
    if k == 1:
        return reconstruct_nearest(samples, mask, building)

    points = np.argwhere(mask).astype(np.int64)  # row-major order
    values = samples[mask]
    targets = np.argwhere(~building & ~mask).astype(np.int64)
    out = samples.copy()
    if targets.shape[0] == 0:
        return out
    dist2, idx = _knn_samples(targets, points, k)
    weights = dist2.astype(np.float64) ** (-cfg.idw_power / 2.0)
    est = (weights * values[idx]).sum(axis=1) / weights.sum(axis=1)
    # a convex combination; the clip only absorbs last-ulp rounding
    out[targets[:, 0], targets[:, 1]] = np.clip(est, values.min(), values.max())
    return out


def _laplace_system(unknown: np.ndarray, accessible: np.ndarray, samples: np.ndarray):
    """Assemble the SPD 4-neighbor Laplace system over unknown pixels.

    Row for unknown u: deg(u) x_u - sum of unknown neighbors = sum of sampled
    neighbor values, where deg counts accessible neighbors only (building and
    border links are dropped, giving homogeneous Neumann behavior there).
    """
    h, w = unknown.shape
    index = np.full((h, w), -1, dtype=np.int64)
    coords = np.argwhere(unknown)
    index[unknown] = np.arange(coords.shape[0])

    known = accessible & ~unknown
    diag = np.zeros(coords.shape[0], dtype=np.float64)
    b = np.zeros(coords.shape[0], dtype=np.float64)
    rows, cols, vals = [], [], []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nr = coords[:, 0] + dr
        nc = coords[:, 1] + dc
        inside = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        nr_in, nc_in = nr[inside], nc[inside]
        src = np.flatnonzero(inside)

        acc_nb = accessible[nr_in, nc_in]
        diag[src[acc_nb]] += 1.0

        unk_nb = unknown[nr_in, nc_in]
        rows.append(src[unk_nb])
        cols.append(index[nr_in[unk_nb], nc_in[unk_nb]])
        vals.append(np.full(int(unk_nb.sum()), -1.0))

        kn_nb = known[nr_in, nc_in]
        np.add.at(b, src[kn_nb], samples[nr_in[kn_nb], nc_in[kn_nb]])

    n = coords.shape[0]
    off = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    matrix = (sparse.diags(diag) + off).tocsr()
    return matrix, b, diag, coords


def _pcg(matrix, b, diag, tolerance: float, max_iters: int) -> tuple[np.ndarray, float, int]:
    """Jacobi-preconditioned conjugate gradient to relative residual <= tolerance."""
    norm_b = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if norm_b == 0.0:
        return x, 0.0, 0
    inv_diag = 1.0 / diag
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for iteration in range(1, max_iters + 1):
        ap = matrix @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        residual = float(np.linalg.norm(r)) / norm_b
        if residual <= tolerance:
            return x, residual, iteration
        z = inv_diag * r
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next
    raise ConvergenceError(float(np.linalg.norm(r)) / norm_b, max_iters)


def reconstruct_laplace(
    samples, mask, building, cfg: ReconConfig, stats: dict | None = None
) -> np.ndarray:
    """Harmonic inpainting of unknown accessible pixels.

    Accessible components without any sample are filled with the mean of all
    samples (logged). The solution is clipped to the sample value range,
    guarding the discrete maximum principle against solver round-off. When
    `stats` is given it receives the final relative residual and iteration
    count.
    """
    samples, mask, building = _check_inputs(samples, mask, building)
    accessible = ~building
    unknown = accessible & ~mask
    values = samples[mask]
    out = samples.copy()
    if stats is not None:
        stats.update(residual=0.0, iterations=0)
    if not unknown.any():
        return out

    labels, _ = ndimage.label(accessible, structure=_CROSS)
    sampled_labels = np.unique(labels[mask])
    orphan = unknown & ~np.isin(labels, sampled_labels)
    solvable = unknown & ~orphan
    if orphan.any():
        logger.warning(
            "%d accessible pixels in components without samples; filling with "
            "the sample mean", int(orphan.sum()),
        )
        out[orphan] = values.mean()

    if solvable.any():
        matrix, b, diag, coords = _laplace_system(solvable, accessible, samples)
        x, residual, iterations = _pcg(matrix, b, diag, cfg.cg_tolerance, cfg.cg_max_iters)
        out[coords[:, 0], coords[:, 1]] = np.clip(x, values.min(), values.max())
        if stats is not None:
            stats.update(residual=residual, iterations=iterations)
    return out


def reconstruct(scene: Scene, mask, cfg: ReconConfig, stats: dict | None = None) -> np.ndarray:
    """Dispatch to the configured method and enforce the observation constraint.

    The constraint is a formal no-op for these interpolating methods, which is
    asserted; the output lies in [0, 1].
    """
    samples = apply_samples(scene.truth, mask)
    if cfg.method == "nearest":
        raw = reconstruct_nearest(samples, mask, scene.building)
    elif cfg.method == "idw":
        raw = reconstruct_idw(samples, mask, scene.building, cfg)
    else:
        raw = reconstruct_laplace(samples, mask, scene.building, cfg, stats=stats)
    constrained = hard_constraint(raw, mask, samples)
    assert np.array_equal(constrained, raw), "method violated the sample constraint"
    assert float(raw.min()) >= 0.0 and float(raw.max()) <= 1.0
    return constrained
