import math

import numpy as np
import pytest

from oracles import naive_masked_errors, naive_obs_loss, naive_psnr, naive_ssim
from trajmap.metrics import (
    CSV_COLUMNS,
    PSNR_CAP_DB,
    MetricReport,
    aggregate,
    aggregate_by,
    format_summary,
    masked_errors,
    obs_loss,
    psnr,
    read_report_csv,
    score_prediction,
    ssim,
    write_report_csv,
)


def _full(shape):
    return np.ones(shape, dtype=bool)


class TestMaskedErrors:
    def test_perfect_prediction(self, rng):
        truth = rng.random((8, 8)) + 0.01
        assert masked_errors(truth, truth, _full((8, 8))) == (0.0, 0.0, 0.0)

    def test_double_truth_has_unit_nmse(self, rng):
        truth = rng.random((8, 8)) + 0.01
        _, _, nmse = masked_errors(2.0 * truth, truth, _full((8, 8)))
        assert abs(nmse - 1.0) < 1e-12

    def test_two_pixel_hand_example(self):
        truth = np.array([[0.0, 1.0]])
        pred = np.array([[0.5, 0.5]])
        mae, rmse, nmse = masked_errors(pred, truth, _full((1, 2)))
        assert mae == 0.5 and rmse == 0.5 and nmse == 0.5

    def test_matches_naive_scan(self, rng):
        for _ in range(5):
            pred = rng.random((9, 11))
            truth = rng.random((9, 11)) + 0.01
            mask = rng.random((9, 11)) < 0.6
            mask[0, 0] = True
            got = masked_errors(pred, truth, mask)
            expected = naive_masked_errors(pred, truth, mask)
            assert np.allclose(got, expected, atol=1e-12)

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError, match="empty evaluation mask"):
            masked_errors(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3), dtype=bool))

    def test_zero_energy_rejected(self):
        with pytest.raises(ValueError, match="energy is zero"):
            masked_errors(np.ones((3, 3)), np.zeros((3, 3)), _full((3, 3)))

    def test_mae_never_exceeds_rmse(self, rng):
        for _ in range(20):
            pred = rng.random((6, 6))
            truth = rng.random((6, 6)) + 0.01
            mae, rmse, _ = masked_errors(pred, truth, _full((6, 6)))
            assert mae <= rmse + 1e-12


class TestPsnr:
    def test_analytic_values(self):
        truth = np.zeros((2, 2))
        truth_e = np.ones((2, 2))
        pred = truth_e + 0.1  # mse = 0.01
        assert abs(psnr(pred, truth_e, _full((2, 2))) - 20.0) < 1e-9
        pred = truth_e + 0.01  # mse = 1e-4
        assert abs(psnr(pred, truth_e, _full((2, 2))) - 40.0) < 1e-9

    def test_identical_maps_hit_cap(self, rng):
        truth = rng.random((5, 5))
        assert psnr(truth, truth, _full((5, 5))) == PSNR_CAP_DB

    def test_consistency_with_rmse(self, rng):
        for _ in range(20):
            pred = rng.random((7, 7))
            truth = rng.random((7, 7)) + 0.01
            _, rmse, _ = masked_errors(pred, truth, _full((7, 7)))
            value = psnr(pred, truth, _full((7, 7)))
            assert abs(value - (-20.0 * math.log10(rmse))) < 1e-9

    def test_matches_naive(self, rng):
        pred = rng.random((8, 8))
        truth = rng.random((8, 8))
        mask = rng.random((8, 8)) < 0.5
        mask[2, 2] = True
        assert abs(psnr(pred, truth, mask) - naive_psnr(pred, truth, mask)) < 1e-9


class TestSsim:
    def test_identical_is_one(self, rng):
        truth = rng.random((16, 16))
        assert ssim(truth, truth, _full((16, 16))) == 1.0

    def test_constant_offset_below_one_matches_naive(self, rng):
        truth = rng.random((16, 16)) * 0.8
        pred = truth + 0.1
        got = ssim(pred, truth, _full((16, 16)))
        assert got < 1.0
        assert abs(got - naive_ssim(pred, truth, _full((16, 16)))) < 1e-6

    def test_random_pairs_match_naive(self, rng):
        for _ in range(3):
            pred = rng.random((32, 32))
            truth = rng.random((32, 32))
            mask = rng.random((32, 32)) < 0.7
            mask[5, 5] = True
            assert abs(ssim(pred, truth, mask) - naive_ssim(pred, truth, mask)) < 1e-6

    def test_symmetry(self, rng):
        pred = rng.random((16, 16))
        truth = rng.random((16, 16))
        assert ssim(pred, truth, _full((16, 16))) == ssim(truth, pred, _full((16, 16)))

    def test_off_mask_values_are_ignored(self, rng):
        pred = rng.random((16, 16))
        truth = rng.random((16, 16))
        mask = rng.random((16, 16)) < 0.6
        mask[3, 3] = True
        pred2 = pred.copy()
        truth2 = truth.copy()
        pred2[~mask] = 0.99
        truth2[~mask] = 0.42
        assert ssim(pred, truth, mask) == ssim(pred2, truth2, mask)

    def test_small_image_rejected(self):
        with pytest.raises(ValueError, match="smaller than"):
            ssim(np.zeros((10, 16)), np.zeros((10, 16)), _full((10, 16)))

    def test_range(self, rng):
        for _ in range(10):
            pred = rng.random((12, 12))
            truth = rng.random((12, 12))
            value = ssim(pred, truth, _full((12, 12)))
            assert -1.0 <= value <= 1.0


class TestObsLoss:
    def test_zero_on_consistent_prediction(self, rng):
        truth = rng.random((6, 6))
        mask = rng.random((6, 6)) < 0.4
        mask[1, 1] = True
        samples = np.where(mask, truth, 0.0)
        assert obs_loss(np.where(mask, samples, 0.123), samples, mask) == 0.0

    def test_constant_offset(self, rng):
        mask = rng.random((6, 6)) < 0.4
        mask[1, 1] = True
        samples = np.where(mask, 0.5, 0.0)
        pred = np.full((6, 6), 0.7)
        assert abs(obs_loss(pred, samples, mask) - 0.2) < 1e-12

    def test_matches_naive(self, rng):
        pred = rng.random((7, 7))
        mask = rng.random((7, 7)) < 0.5
        mask[0, 3] = True
        samples = np.where(mask, rng.random((7, 7)), 0.0)
        assert abs(obs_loss(pred, samples, mask) - naive_obs_loss(pred, samples, mask)) < 1e-12

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError, match="empty observation mask"):
            obs_loss(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3), dtype=bool))


class TestScorePrediction:
    def test_metrics_ignore_building_values(self, toy_scene, rng):
        mask = (rng.random(toy_scene.shape) < 0.05) & ~toy_scene.building
        mask[toy_scene.tx] = True
        pred = rng.random(toy_scene.shape)
        mutated = pred.copy()
        mutated[toy_scene.building] = 0.987
        a = score_prediction(toy_scene.truth, toy_scene.building, mask, pred)
        b = score_prediction(toy_scene.truth, toy_scene.building, mask, mutated)
        assert (a.mae, a.rmse, a.nmse, a.psnr_db, a.ssim, a.obs_loss) == (
            b.mae, b.rmse, b.nmse, b.psnr_db, b.ssim, b.obs_loss
        )

    def test_truth_as_prediction_is_perfect(self, toy_scene):
        mask = np.zeros(toy_scene.shape, dtype=bool)
        mask[toy_scene.tx] = True
        report = score_prediction(toy_scene.truth, toy_scene.building, mask, toy_scene.truth)
        assert report.mae == 0.0
        assert report.nmse == 0.0
        assert report.psnr_db == PSNR_CAP_DB
        assert report.ssim == 1.0

    def test_hard_constraint_applied_by_default(self, toy_scene, rng):
        mask = (rng.random(toy_scene.shape) < 0.1) & ~toy_scene.building
        mask[toy_scene.tx] = True
        pred = np.zeros(toy_scene.shape)
        constrained = score_prediction(toy_scene.truth, toy_scene.building, mask, pred)
        raw = score_prediction(
            toy_scene.truth, toy_scene.building, mask, pred, enforce_observations=False
        )
        assert constrained.mae < raw.mae  # samples were restored
        assert constrained.obs_loss == raw.obs_loss  # always scored on the raw map


class TestReports:
    def _report(self, mae, **meta):
        return MetricReport(
            mae=mae, rmse=mae * 1.5, nmse=mae, psnr_db=20.0, ssim=0.9,
            obs_loss=0.0, pixel_count=100, **meta,
        )

    def test_invariant_validation(self):
        with pytest.raises(ValueError, match="exceeds rmse"):
            MetricReport(mae=0.5, rmse=0.1, nmse=0.0, psnr_db=1.0, ssim=0.5,
                         obs_loss=0.0, pixel_count=1)
        with pytest.raises(ValueError, match="nmse"):
            MetricReport(mae=0.1, rmse=0.2, nmse=-0.1, psnr_db=1.0, ssim=0.5,
                         obs_loss=0.0, pixel_count=1)
        with pytest.raises(ValueError, match="ssim"):
            MetricReport(mae=0.1, rmse=0.2, nmse=0.1, psnr_db=1.0, ssim=1.5,
                         obs_loss=0.0, pixel_count=1)

    def test_single_report_aggregates_to_itself(self):
        report = self._report(0.02, map_id=1, rate=0.01, variant=0, method="idw")
        agg = aggregate([report])
        assert agg == report

    def test_two_report_mean(self):
        a = self._report(0.01)
        b = self._report(0.03)
        assert aggregate([a, b]).mae == pytest.approx(0.02)

    def test_sweep_aggregate_matches_flat_mean(self, rng):
        reports = []
        for rate in (0.005, 0.01, 0.015, 0.02, 0.025):
            for variant in range(8):
                reports.append(self._report(float(rng.uniform(0.01, 0.1)),
                                            rate=rate, variant=variant, method="m"))
        agg = aggregate(reports)
        assert agg.mae == pytest.approx(np.mean([r.mae for r in reports]))
        assert agg.rmse == pytest.approx(np.mean([r.rmse for r in reports]))
        assert agg.method == "m"
        assert agg.rate is None  # non-uniform metadata drops out
        by_rate = aggregate_by(reports, lambda r: r.rate)
        assert len(by_rate) == 5
        first = [r for r in reports if r.rate == 0.005]
        assert by_rate[0.005].mae == pytest.approx(np.mean([r.mae for r in first]))

    def test_empty_aggregate_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_csv_round_trip(self, tmp_path):
        reports = [
            self._report(0.02, map_id=1, rate=0.005, variant=0, method="nearest"),
            self._report(0.04, map_id=2, rate=0.025, variant=7, method="laplace"),
        ]
        path = tmp_path / "m.csv"
        write_report_csv(reports, path)
        header = path.read_text().splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)
        loaded = read_report_csv(path)
        assert len(loaded) == 2
        assert loaded[0].map_id == 1 and loaded[0].method == "nearest"
        assert loaded[1].rate == pytest.approx(0.025)
        assert loaded[1].mae == pytest.approx(0.04)

    def test_summary_has_one_row_per_method(self):
        reports = [
            self._report(0.02, method="nearest", rate=0.01),
            self._report(0.03, method="nearest", rate=0.02),
            self._report(0.05, method="laplace", rate=0.01),
        ]
        text = format_summary(reports)
        lines = [l for l in text.splitlines() if l.startswith(("nearest", "laplace"))]
        assert len(lines) == 2 + 3  # overall rows + per-rate rows
