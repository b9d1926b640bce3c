"""Masked evaluation metrics and report aggregation.

All metrics are computed over an evaluation mask (non-building pixels in the
standard protocol) and are invariant to whatever values sit outside it: the
error metrics never read those pixels, and SSIM zeroes them before computing
window statistics, so buildings contribute the constant 0 that dataset rasters
store there.

  * MAE / RMSE over the mask; NMSE normalized by ground-truth energy.
  * PSNR with unit peak; a zero-MSE prediction reports the 99 dB cap.
  * Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
    K2 = 0.03, dynamic range 1; the per-pixel map is averaged over the mask.
  * Observation loss: mean absolute error against the samples on mask pixels,
    applied to the raw (pre-constraint) reconstruction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path

import numpy as np

from trajmap.fields import gaussian_smooth
from trajmap.grids import apply_samples, as_grid, as_mask, hard_constraint

PSNR_CAP_DB = 99.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    """Per-map (or aggregated) metric values plus instance metadata."""

    mae: float
    rmse: float
    nmse: float
    psnr_db: float
    ssim: float
    obs_loss: float
    pixel_count: int
    guide_loss: float | None = None
    map_id: int | None = None
    rate: float | None = None
    variant: int | None = None
    method: str | None = None

    def __post_init__(self):
        # relative slack tolerates 9-significant-digit CSV round trips
        if self.mae > self.rmse * (1.0 + 1e-8) + 1e-12:
            raise ValueError(f"mae {self.mae} exceeds rmse {self.rmse}")
        if self.nmse < 0:
            raise ValueError(f"nmse must be >= 0, got {self.nmse}")
        if not -1.0 - 1e-12 <= self.ssim <= 1.0 + 1e-12:
            raise ValueError(f"ssim must be in [-1, 1], got {self.ssim}")


def _checked_pair(pred, truth, eval_mask):
    pred = as_grid(pred)
    truth = as_grid(truth)
    eval_mask = as_mask(eval_mask)
    if not pred.shape == truth.shape == eval_mask.shape:
        raise ValueError("prediction, truth, and mask dimensions differ")
    if not eval_mask.any():
        raise ValueError("empty evaluation mask")
    return pred, truth, eval_mask


def masked_errors(pred, truth, eval_mask) -> tuple[float, float, float]:
    """(MAE, RMSE, NMSE) over the evaluation mask; NMSE uses truth energy."""
    pred, truth, eval_mask = _checked_pair(pred, truth, eval_mask)
    err = (pred - truth)[eval_mask]
    truth_masked = truth[eval_mask]
    mae = float(np.abs(err).mean())
    rmse = float(math.sqrt(np.square(err).mean()))
    energy = float(np.square(truth_masked).sum())
    if energy == 0.0:
        raise ValueError("nmse undefined: ground-truth energy is zero on the mask")
    nmse = float(np.square(err).sum() / energy)
    return mae, rmse, nmse


def psnr(pred, truth, eval_mask) -> float:
    """Masked PSNR in dB with peak value 1; exact-zero MSE reports the cap."""
    pred, truth, eval_mask = _checked_pair(pred, truth, eval_mask)
    mse = float(np.square((pred - truth)[eval_mask]).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return -10.0 * math.log10(mse)


def ssim(pred, truth, eval_mask) -> float:
    """Masked single-scale SSIM.

    The per-pixel SSIM map is computed on the full image with off-mask pixels
    zeroed (windows see buildings as the stored 0), then averaged over the
    evaluation mask. Window statistics use Gaussian weighting with replicate
    borders.
    """
    pred, truth, eval_mask = _checked_pair(pred, truth, eval_mask)
    h, w = pred.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(
            f"image {pred.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    x = np.where(eval_mask, pred, 0.0)
    y = np.where(eval_mask, truth, 0.0)

    mu_x = gaussian_smooth(x, SSIM_SIGMA)
    mu_y = gaussian_smooth(y, SSIM_SIGMA)
    var_x = gaussian_smooth(x * x, SSIM_SIGMA) - mu_x * mu_x
    var_y = gaussian_smooth(y * y, SSIM_SIGMA) - mu_y * mu_y
    cov = gaussian_smooth(x * y, SSIM_SIGMA) - mu_x * mu_y

    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    ssim_map = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(ssim_map[eval_mask].mean())


def obs_loss(raw_pred, samples, mask) -> float:
    """Mean absolute deviation from the observed samples on mask pixels."""
    raw_pred = as_grid(raw_pred)
    samples = as_grid(samples)
    mask = as_mask(mask)
    if not raw_pred.shape == samples.shape == mask.shape:
        raise ValueError("prediction, samples, and mask dimensions differ")
    if not mask.any():
        raise ValueError("empty observation mask")
    return float(np.abs(raw_pred - samples)[mask].mean())


def score_prediction(
    truth,
    building,
    mask,
    raw_pred,
    *,
    enforce_observations: bool = True,
    guide_loss: float | None = None,
    map_id: int | None = None,
    rate: float | None = None,
    variant: int | None = None,
    method: str | None = None,
) -> MetricReport:
    """Full metric suite for one prediction against one scene.

    Metrics are computed over non-building pixels, by default after enforcing
    observation consistency at sampled locations; the observation loss always
    uses the raw prediction. PSNR and RMSE satisfy
    psnr = -20 log10(rmse) whenever rmse > 0.
    """
    truth = as_grid(truth, unit=True)
    building = as_mask(building)
    mask = as_mask(mask)
    raw_pred = as_grid(raw_pred)
    samples = apply_samples(truth, mask)
    evaluated = hard_constraint(raw_pred, mask, samples) if enforce_observations else raw_pred
    eval_mask = ~building

    mae, rmse, nmse = masked_errors(evaluated, truth, eval_mask)
    psnr_db = psnr(evaluated, truth, eval_mask)
    if rmse > 0.0:
        assert abs(psnr_db - (-20.0 * math.log10(rmse))) < 1e-9
    return MetricReport(
        mae=mae,
        rmse=rmse,
        nmse=nmse,
        psnr_db=psnr_db,
        ssim=ssim(evaluated, truth, eval_mask),
        obs_loss=obs_loss(raw_pred, samples, mask),
        pixel_count=int(eval_mask.sum()),
        guide_loss=guide_loss,
        map_id=map_id,
        rate=rate,
        variant=variant,
        method=method,
    )


def _uniform(values):
    first = values[0]
    return first if all(v == first for v in values) else None


def aggregate(reports: list[MetricReport]) -> MetricReport:
    """Unweighted mean of each metric; metadata kept only where uniform."""
    if not reports:
        raise ValueError("cannot aggregate an empty report list")
    guide = [r.guide_loss for r in reports]
    return MetricReport(
        mae=float(np.mean([r.mae for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        nmse=float(np.mean([r.nmse for r in reports])),
        psnr_db=float(np.mean([r.psnr_db for r in reports])),
        ssim=float(np.mean([r.ssim for r in reports])),
        obs_loss=float(np.mean([r.obs_loss for r in reports])),
        pixel_count=int(sum(r.pixel_count for r in reports)),
        guide_loss=float(np.mean(guide)) if all(g is not None for g in guide) else None,
        map_id=_uniform([r.map_id for r in reports]),
        rate=_uniform([r.rate for r in reports]),
        variant=_uniform([r.variant for r in reports]),
        method=_uniform([r.method for r in reports]),
    )


def aggregate_by(reports: list[MetricReport], key) -> dict:
    """Sub-aggregates grouped by a key function, insertion-ordered."""
    groups: dict = {}
    for report in reports:
        groups.setdefault(key(report), []).append(report)
    return {k: aggregate(v) for k, v in groups.items()}


CSV_COLUMNS = (
    "map_id",
    "rate",
    "variant",
    "method",
    "mae",
    "rmse",
    "nmse",
    "psnr_db",
    "ssim",
    "obs_loss",
)

_METRIC_COLUMNS = ("mae", "rmse", "nmse", "psnr_db", "ssim", "obs_loss")


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def write_report_csv(reports: list[MetricReport], path) -> None:
    """One row per report with the fixed column set."""
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            writer.writerow(_format_cell(getattr(report, col)) for col in CSV_COLUMNS)


def read_report_csv(path) -> list[MetricReport]:
    """Load reports written by `write_report_csv`."""
    out = []
    field_types = {f.name: f.type for f in dataclass_fields(MetricReport)}
    with Path(path).open(newline="") as handle:
        for row in csv.DictReader(handle):
            kwargs = {}
            for col in CSV_COLUMNS:
                raw = row[col]
                if raw == "":
                    kwargs[col] = None
                elif field_types[col].startswith("int"):
                    kwargs[col] = int(raw)
                elif col == "method":
                    kwargs[col] = raw
                else:
                    kwargs[col] = float(raw)
            out.append(MetricReport(pixel_count=0, **kwargs))
    return out


def format_summary(reports: list[MetricReport]) -> str:
    """Aggregate table with one row per method, averaged over maps, rates,
    and variants, plus a per-rate breakdown."""
    lines = []
    header = f"{'method':<16}{'MAE':>10}{'RMSE':>10}{'NMSE':>10}{'PSNR(dB)':>10}{'SSIM':>10}{'OBS':>10}"

    def row(label: str, report: MetricReport) -> str:
        return (
            f"{label:<16}"
            f"{report.mae:>10.4f}{report.rmse:>10.4f}{report.nmse:>10.4f}"
            f"{report.psnr_db:>10.2f}{report.ssim:>10.4f}{report.obs_loss:>10.4f}"
        )

    lines.append("== overall (averaged over maps, rates, variants) ==")
    lines.append(header)
    by_method = aggregate_by(reports, lambda r: r.method)
    for method in sorted(by_method, key=str):
        lines.append(row(str(method), by_method[method]))

    lines.append("")
    lines.append("== per sampling rate ==")
    lines.append(f"{'method @ rate':<16}" + header[16:])
    by_method_rate = aggregate_by(reports, lambda r: (r.method, r.rate))
    for method, rate in sorted(by_method_rate, key=lambda k: (str(k[0]), k[1] or 0.0)):
        label = f"{method} @ {rate:g}" if rate is not None else str(method)
        lines.append(row(label, by_method_rate[(method, rate)]))
    return "\n".join(lines) + "\n"
