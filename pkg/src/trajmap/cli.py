"""Command-line pipeline: mask generation, guidance, reconstruction, evaluation.

Subcommands
    gen-masks      trajectory (and optionally random) observation masks
    gen-guidance   risk guidance targets for existing trajectory masks
    reconstruct    classical baseline predictions with the hard constraint
    evaluate       metric CSV + summary table for stored predictions

Options resolve as: built-in default < config file < command-line flag. The
config file is flat `key = value` text; keys match the long flag names with
underscores (e.g. `dataset_root`, `rates`, `sigma_d`). Exit codes: 0 success,
2 usage error, 1 runtime error.

Output tree: {out}/masks, {out}/guidance, {out}/pred[_random], {out}/reports.
Given identical config and seed every subcommand is idempotent and
byte-identical across reruns; existing outputs are skipped unless --force.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from trajmap import io
from trajmap.baselines import METHODS, ReconConfig, reconstruct
from trajmap.fields import euclidean_distance_transform
from trajmap.grids import Scene, clamp_unit, sampling_budget
from trajmap.guidance import RiskParams, guidance_loss, guidance_target
from trajmap.metrics import (
    MetricReport,
    format_summary,
    score_prediction,
    write_report_csv,
)
from trajmap.synthetic import write_toy_dataset
from trajmap.trajectory import (
    MAX_VARIANTS,
    TrajectorySpec,
    generate_random_mask,
    generate_trajectory_mask,
)

logger = logging.getLogger(__name__)

DEFAULT_RATES = (0.005, 0.010, 0.015, 0.020, 0.025)
DEFAULT_SEED = 2024
MASK_KINDS = ("trajectory", "random")


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one pipeline invocation."""

    layout: io.DatasetLayout
    out_dir: Path
    global_seed: int = DEFAULT_SEED
    rates: tuple[float, ...] = DEFAULT_RATES
    variants: int = MAX_VARIANTS
    risk: RiskParams = RiskParams()
    recon: ReconConfig = ReconConfig()
    workers: int = 1
    force: bool = False
    map_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if self.variants < 1 or self.variants > MAX_VARIANTS:
            raise ValueError(f"variants must be in [1, {MAX_VARIANTS}]")
        for rate in self.rates:
            if not 0.0 < rate <= 1.0:
                raise ValueError(f"rates must be in (0, 1], got {rate}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def masks_dir(self) -> Path:
        return self.out_dir / "masks"

    def guidance_dir(self) -> Path:
        return self.out_dir / "guidance"

    def pred_dir(self, kind: str = "trajectory") -> Path:
        return self.out_dir / ("pred" if kind == "trajectory" else "pred_random")

    def reports_dir(self) -> Path:
        return self.out_dir / "reports"


def load_config_file(path) -> dict[str, str]:
    """Parse flat `key = value` lines; `#` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def parse_id_list(text: str) -> tuple[int, ...]:
    """Parse '0-4,7' style map-id selections."""
    ids: list[int] = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if "-" in token:
            lo, hi = token.split("-", 1)
            ids.extend(range(int(lo), int(hi) + 1))
        else:
            ids.append(int(token))
    return tuple(ids)


def _run_items(items, worker, max_workers: int) -> None:
    """Bounded worker pool; a failed item aborts after draining in-flight work."""
    if max_workers <= 1 or len(items) <= 1:
        for item in items:
            worker(item)
        return
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(worker, item) for item in items]
        done, not_done = wait(futures, return_when=FIRST_EXCEPTION)
        failed = next((f for f in done if f.exception() is not None), None)
        if failed is not None:
            for future in not_done:
                future.cancel()
            raise failed.exception()


# ---------------------------------------------------------------------------
# argument plumbing


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    parser.add_argument("--dataset-root", type=Path, help="scene dataset directory")
    parser.add_argument("--out", type=Path, help="output directory (default: out)")
    parser.add_argument("--seed", type=int, help=f"global seed (default {DEFAULT_SEED})")
    parser.add_argument("--rates", help="comma-separated sampling rates")
    parser.add_argument("--variants", type=int, help="mask variants per map and rate")
    parser.add_argument("--ids", help="map ids, e.g. '0-4,7' (default: all on disk)")
    parser.add_argument(
        "--split", choices=("train", "test", "all"), help="id range when --ids unset"
    )
    parser.add_argument("--toy", type=int, metavar="N", help="synthesize N toy scenes first")
    parser.add_argument("--toy-size", type=int, help="toy scene side length (default 64)")
    parser.add_argument("--workers", type=int, help="worker pool size (default 1)")
    parser.add_argument("--force", action="store_true", help="rewrite existing outputs")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _add_risk(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sigma-d", type=float, help="distance risk scale (default 16)")
    parser.add_argument("--sigma-e", type=float, help="boundary risk scale (default 5)")
    parser.add_argument("--sigma-s", type=float, help="target smoothing sigma (default 1)")
    parser.add_argument(
        "--occlusion-samples", type=int, help="sight-line sample count (default 64)"
    )
    parser.add_argument("--w-d", type=float, help="distance risk weight (default 0.6)")
    parser.add_argument("--w-e", type=float, help="boundary risk weight (default 0.25)")
    parser.add_argument("--w-o", type=float, help="occlusion risk weight (default 0.15)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajmap",
        description="Trajectory-sampled radio map toolkit: masks, guidance, "
        "baselines, and masked evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-masks", help="generate observation masks")
    _add_common(p)
    p.add_argument("--random", action="store_true", help="also write random-sampled masks")

    p = sub.add_parser("gen-guidance", help="compute risk guidance targets")
    _add_common(p)
    _add_risk(p)
    p.add_argument(
        "--components", action="store_true", help="also write per-component risk fields"
    )
    p.add_argument(
        "--distance-maps",
        action="store_true",
        help="also write the distance-to-observation map, raw (pixel units) and "
        "min-max normalized; downstream consumers pick the scaling they need",
    )
    p.add_argument(
        "--previews", action="store_true", help="also write 8-bit PNG previews"
    )

    p = sub.add_parser("reconstruct", help="run a classical baseline")
    _add_common(p)
    p.add_argument("--method", choices=METHODS, help="reconstruction method (default laplace)")
    p.add_argument("--idw-power", type=float, help="IDW distance exponent (default 2)")
    p.add_argument("--idw-k", type=int, help="IDW neighbor count (default 8)")
    p.add_argument("--cg-tolerance", type=float, help="CG relative residual (default 1e-8)")
    p.add_argument("--cg-max-iters", type=int, help="CG iteration cap (default 10000)")
    p.add_argument(
        "--mask-kind", choices=MASK_KINDS, help="which mask set to reconstruct from"
    )
    p.add_argument(
        "--previews", action="store_true", help="also write 8-bit PNG previews"
    )

    p = sub.add_parser("evaluate", help="score stored predictions")
    _add_common(p)
    _add_risk(p)
    p.add_argument("--pred-dir", type=Path, help="prediction directory (default {out}/pred)")
    p.add_argument(
        "--raw", action="store_true", help="evaluate raw predictions (skip hard constraint)"
    )
    p.add_argument(
        "--mask-kind", choices=MASK_KINDS, help="which mask set predictions belong to"
    )
    p.add_argument(
        "--guidance-dir",
        type=Path,
        help="score guide_*.tgf files in this directory against computed targets",
    )
    return parser


def _resolve(args, cfg_file: dict[str, str], key: str, default, cast):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in cfg_file:
        raw = cfg_file[key]
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    return default


def _parse_rates(raw) -> tuple[float, ...]:
    if isinstance(raw, tuple):
        return raw
    return tuple(float(tok) for tok in str(raw).split(",") if tok.strip())


def resolve_config(args) -> RunConfig:
    cfg_file = load_config_file(args.config) if args.config else {}
    dataset_root = _resolve(args, cfg_file, "dataset_root", Path("dataset"), Path)
    layout = io.DatasetLayout(root=dataset_root)

    risk = RiskParams(
        sigma_d=_resolve(args, cfg_file, "sigma_d", 16.0, float),
        sigma_e=_resolve(args, cfg_file, "sigma_e", 5.0, float),
        sigma_s=_resolve(args, cfg_file, "sigma_s", 1.0, float),
        n_occlusion_samples=_resolve(args, cfg_file, "occlusion_samples", 64, int),
        w_d=_resolve(args, cfg_file, "w_d", 0.6, float),
        w_e=_resolve(args, cfg_file, "w_e", 0.25, float),
        w_o=_resolve(args, cfg_file, "w_o", 0.15, float),
    )
    recon = ReconConfig(
        method=_resolve(args, cfg_file, "method", "laplace", str),
        idw_power=_resolve(args, cfg_file, "idw_power", 2.0, float),
        idw_k=_resolve(args, cfg_file, "idw_k", 8, int),
        cg_tolerance=_resolve(args, cfg_file, "cg_tolerance", 1e-8, float),
        cg_max_iters=_resolve(args, cfg_file, "cg_max_iters", 10000, int),
    )

    toy = _resolve(args, cfg_file, "toy", None, int)
    toy_size = _resolve(args, cfg_file, "toy_size", 64, int)
    seed = _resolve(args, cfg_file, "seed", DEFAULT_SEED, int)
    if toy is not None:
        write_toy_dataset(layout, toy, global_seed=seed, height=toy_size, width=toy_size)

    ids_raw = _resolve(args, cfg_file, "ids", None, str)
    if ids_raw is not None:
        map_ids = parse_id_list(str(ids_raw))
    else:
        split = _resolve(args, cfg_file, "split", "all", str)
        if split == "train":
            candidates = layout.train_ids()
        elif split == "test":
            candidates = layout.test_ids()
        else:
            candidates = list(layout.train_ids()) + list(layout.test_ids())
        map_ids = tuple(i for i in candidates if layout.has_scene(i))
    if not map_ids:
        raise RuntimeError(f"no dataset scenes found under {layout.root}")

    return RunConfig(
        layout=layout,
        out_dir=_resolve(args, cfg_file, "out", Path("out"), Path),
        global_seed=seed,
        rates=_parse_rates(_resolve(args, cfg_file, "rates", DEFAULT_RATES, str)),
        variants=_resolve(args, cfg_file, "variants", MAX_VARIANTS, int),
        risk=risk,
        recon=recon,
        workers=_resolve(args, cfg_file, "workers", 1, int),
        force=bool(getattr(args, "force", False) or _resolve(args, cfg_file, "force", False, bool)),
        map_ids=map_ids,
    )


# ---------------------------------------------------------------------------
# subcommands


def _instances(config: RunConfig):
    for rate in config.rates:
        for variant in range(config.variants):
            yield rate, variant


def _load_mask(config: RunConfig, map_id: int, rate: float, variant: int, kind: str):
    path = config.masks_dir() / io.mask_filename(map_id, rate, variant, kind)
    if not path.is_file():
        raise FileNotFoundError(f"missing mask (run gen-masks first): {path}")
    return io.read_mask_png(path)


def cmd_gen_masks(config: RunConfig, with_random: bool) -> int:
    """Write per-(map, rate, variant) masks with exact observation budgets."""
    masks_dir = config.masks_dir()
    masks_dir.mkdir(parents=True, exist_ok=True)
    kinds = ("trajectory", "random") if with_random else ("trajectory",)
    counts: list[int] = []

    def work(map_id: int) -> None:
        scene = io.load_scene(config.layout, map_id)
        count = 0
        for rate, variant in _instances(config):
            spec = TrajectorySpec(map_id, rate, variant, config.global_seed)
            budget = sampling_budget(scene.building, rate)
            for kind in kinds:
                png = masks_dir / io.mask_filename(map_id, rate, variant, kind)
                record = png.with_suffix(".json")
                if not config.force and png.is_file() and record.is_file():
                    continue
                generate = (
                    generate_trajectory_mask if kind == "trajectory" else generate_random_mask
                )
                mask = generate(scene, spec)
                achieved = int(mask.sum())
                assert achieved == budget, (
                    f"budget violation: {achieved} != {budget} for {png.name}"
                )
                io.write_mask_png(mask, png)
                io.write_record(
                    record,
                    {
                        "map_id": map_id,
                        "rate": rate,
                        "variant": variant,
                        "global_seed": config.global_seed,
                        "kind": kind,
                        "pixel_count": achieved,
                    },
                )
                count += 1
        counts.append(count)
        logger.info("gen-masks: map %d done (%d files)", map_id, count)

    _run_items(list(config.map_ids), work, config.workers)
    logger.info("gen-masks: wrote %d mask files", sum(counts))
    return 0


def cmd_gen_guidance(
    config: RunConfig, components: bool, distance_maps: bool, previews: bool = False
) -> int:
    """Write guidance targets (and optional component fields) per instance."""
    out_dir = config.guidance_dir()
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(map_id: int) -> None:
        scene = io.load_scene(config.layout, map_id)
        for rate, variant in _instances(config):
            target_path = out_dir / io.guidance_filename(map_id, rate, variant, "guide")
            extras = []
            if components:
                extras = [
                    out_dir / io.guidance_filename(map_id, rate, variant, prefix)
                    for prefix in ("risk_dist", "risk_edge", "risk_occl", "risk_fused")
                ]
            if distance_maps:
                extras += [
                    out_dir / io.guidance_filename(map_id, rate, variant, prefix)
                    for prefix in ("dtau", "dtau_norm")
                ]
            if not config.force and target_path.is_file() and all(p.is_file() for p in extras):
                continue
            mask = _load_mask(config, map_id, rate, variant, "trajectory")
            decomp = guidance_target(scene, mask, config.risk)
            io.write_field(decomp.target, target_path)
            if previews:
                io.write_field_preview(decomp.target, target_path.with_suffix(".png"))
            if components:
                for field, prefix in (
                    (decomp.r_distance, "risk_dist"),
                    (decomp.r_boundary, "risk_edge"),
                    (decomp.r_occlusion, "risk_occl"),
                    (decomp.fused_raw, "risk_fused"),
                ):
                    io.write_field(
                        field, out_dir / io.guidance_filename(map_id, rate, variant, prefix)
                    )
            if distance_maps:
                d_tau = euclidean_distance_transform(mask)
                io.write_field(
                    d_tau, out_dir / io.guidance_filename(map_id, rate, variant, "dtau")
                )
                span = d_tau.max() - d_tau.min()
                normalized = (d_tau - d_tau.min()) / span if span > 0 else np.zeros_like(d_tau)
                io.write_field(
                    normalized,
                    out_dir / io.guidance_filename(map_id, rate, variant, "dtau_norm"),
                )
        logger.info("gen-guidance: map %d done", map_id)

    _run_items(list(config.map_ids), work, config.workers)
    return 0


def cmd_reconstruct(config: RunConfig, mask_kind: str, previews: bool = False) -> int:
    """Write per-instance predictions for the configured method."""
    out_dir = config.pred_dir(mask_kind)
    out_dir.mkdir(parents=True, exist_ok=True)
    method = config.recon.method

    def work(map_id: int) -> None:
        scene = io.load_scene(config.layout, map_id)
        for rate, variant in _instances(config):
            pred_path = out_dir / io.prediction_filename(map_id, rate, variant, method)
            record_path = pred_path.with_suffix(".json")
            if not config.force and pred_path.is_file() and record_path.is_file():
                continue
            mask = _load_mask(config, map_id, rate, variant, mask_kind)
            stats: dict = {}
            prediction = reconstruct(scene, mask, config.recon, stats=stats)
            io.write_field(prediction, pred_path)
            if previews:
                io.write_field_preview(prediction, pred_path.with_suffix(".png"))
            record = {
                "map_id": map_id,
                "rate": rate,
                "variant": variant,
                "method": method,
                "mask_kind": mask_kind,
            }
            if method == "laplace":
                record["residual"] = stats.get("residual", 0.0)
                record["iterations"] = stats.get("iterations", 0)
            io.write_record(record_path, record)
        logger.info("reconstruct[%s]: map %d done", method, map_id)

    _run_items(list(config.map_ids), work, config.workers)
    return 0


def cmd_evaluate(
    config: RunConfig,
    pred_dir: Path | None,
    raw: bool,
    mask_kind: str,
    guidance_dir: Path | None,
) -> int:
    """Score stored predictions: per-instance CSV plus aggregate summary."""
    pred_dir = pred_dir if pred_dir is not None else config.pred_dir(mask_kind)
    pred_files = sorted(pred_dir.glob(f"pred_*{io.FIELD_SUFFIX}"))
    if not pred_files:
        raise RuntimeError(f"no prediction files under {pred_dir}")
    reports_dir = config.reports_dir()
    reports_dir.mkdir(parents=True, exist_ok=True)

    scenes: dict[int, Scene] = {}
    reports: list[MetricReport] = []
    for path in pred_files:
        map_id, rate, variant, method = io.parse_prediction_filename(path.name)
        if map_id not in scenes:
            scenes[map_id] = io.load_scene(config.layout, map_id)
        scene = scenes[map_id]
        mask = _load_mask(config, map_id, rate, variant, mask_kind)
        raw_pred = clamp_unit(io.read_field(path), what=path.name)
        if raw_pred.shape != scene.shape:
            raise ValueError(f"{path.name}: prediction shape {raw_pred.shape} "
                             f"differs from scene {scene.shape}")
        reports.append(
            score_prediction(
                scene.truth,
                scene.building,
                mask,
                raw_pred,
                enforce_observations=not raw,
                map_id=map_id,
                rate=rate,
                variant=variant,
                method=method,
            )
        )

    reports.sort(key=lambda r: (r.method or "", r.map_id or 0, r.rate or 0.0, r.variant or 0))
    csv_path = reports_dir / "metrics.csv"
    write_report_csv(reports, csv_path)
    summary = format_summary(reports)
    (reports_dir / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    logger.info("evaluate: %d instances -> %s", len(reports), csv_path)

    if guidance_dir is not None:
        _score_guidance(config, guidance_dir, reports_dir)
    return 0


def _score_guidance(config: RunConfig, guidance_dir: Path, reports_dir: Path) -> None:
    """Score external guide_*.tgf maps against freshly computed targets."""
    rows = []
    guide_files = sorted(guidance_dir.glob(f"guide_*{io.FIELD_SUFFIX}"))
    if not guide_files:
        raise RuntimeError(f"no guide_*.tgf files under {guidance_dir}")
    scenes: dict[int, Scene] = {}
    for path in guide_files:
        parts = path.name[: -len(io.FIELD_SUFFIX)].split("_")
        map_id, permille, variant = int(parts[1]), float(parts[2]), int(parts[3])
        rate = permille / 1000.0
        if map_id not in scenes:
            scenes[map_id] = io.load_scene(config.layout, map_id)
        scene = scenes[map_id]
        mask = _load_mask(config, map_id, rate, variant, "trajectory")
        target = guidance_target(scene, mask, config.risk).target
        predicted = clamp_unit(io.read_field(path), what=path.name)
        loss = guidance_loss(predicted, target, scene.building)
        rows.append((map_id, rate, variant, loss))
    with (reports_dir / "guidance.csv").open("w") as handle:
        handle.write("map_id,rate,variant,guide_loss\n")
        for map_id, rate, variant, loss in rows:
            handle.write(f"{map_id},{rate:.9g},{variant},{loss:.9g}\n")
    mean_loss = sum(r[3] for r in rows) / len(rows)
    sys.stdout.write(f"guidance loss over {len(rows)} instances: mean {mean_loss:.6f}\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        if args.command == "gen-masks":
            return cmd_gen_masks(config, with_random=args.random)
        if args.command == "gen-guidance":
            return cmd_gen_guidance(
                config,
                components=args.components,
                distance_maps=args.distance_maps,
                previews=args.previews,
            )
        if args.command == "reconstruct":
            return cmd_reconstruct(
                config,
                mask_kind=args.mask_kind or "trajectory",
                previews=args.previews,
            )
        if args.command == "evaluate":
            return cmd_evaluate(
                config,
                pred_dir=args.pred_dir,
                raw=args.raw,
                mask_kind=args.mask_kind or "trajectory",
                guidance_dir=args.guidance_dir,
            )
        raise AssertionError(f"unhandled command {args.command}")
    except Exception as exc:  # runtime failures map to exit code 1
        logger.error("%s", exc)
        if getattr(args, "verbose", False):
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
