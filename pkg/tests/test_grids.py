import numpy as np
import pytest

from trajmap.grids import (
    Scene,
    apply_samples,
    as_grid,
    assemble_condition,
    clamp_unit,
    hard_constraint,
    sampling_budget,
    tx_onehot,
)


class TestSamplingBudget:
    def test_one_percent_of_open_map(self):
        building = np.zeros((100, 100), dtype=bool)
        assert sampling_budget(building, 0.01) == 100

    def test_quarter_permille_rates(self):
        building = np.zeros((100, 100), dtype=bool)  # 10000 accessible
        assert sampling_budget(building, 0.025) == 250

    def test_round_half_up_with_buildings(self):
        # 64x64 with 1000 building pixels -> 3096 accessible; 0.005 * 3096 = 15.48
        building = np.zeros((64, 64), dtype=bool)
        building.flat[:1000] = True
        assert int((~building).sum()) == 3096
        assert sampling_budget(building, 0.005) == 15

    def test_no_accessible_area(self):
        with pytest.raises(ValueError, match="no accessible area"):
            sampling_budget(np.ones((4, 4), dtype=bool), 0.5)

    @pytest.mark.parametrize("rate", [0.0, -0.1, 1.5])
    def test_rate_bounds(self, rate):
        with pytest.raises(ValueError):
            sampling_budget(np.zeros((4, 4), dtype=bool), rate)

    def test_monotone_in_rate_and_accessible_count(self, rng):
        for _ in range(50):
            h, w = int(rng.integers(4, 30)), int(rng.integers(4, 30))
            building = rng.random((h, w)) < 0.3
            if not (~building).any():
                continue
            r1, r2 = sorted(rng.uniform(0.001, 1.0, size=2))
            assert sampling_budget(building, r1) <= sampling_budget(building, r2)
            # clearing building pixels can only grow the budget
            fewer = building.copy()
            fewer[fewer.argmax() // w, fewer.argmax() % w] = False
            assert sampling_budget(fewer, r1) >= sampling_budget(building, r1)


class TestApplySamples:
    def test_empty_mask_gives_zero_map(self, rng):
        truth = rng.random((6, 7))
        out = apply_samples(truth, np.zeros((6, 7), dtype=bool))
        assert np.array_equal(out, np.zeros((6, 7)))

    def test_full_mask_is_identity(self, rng):
        truth = rng.random((6, 7))
        assert np.array_equal(apply_samples(truth, np.ones((6, 7), dtype=bool)), truth)

    def test_single_pixel(self):
        truth = np.zeros((5, 5))
        truth[2, 3] = 0.7
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 3] = True
        out = apply_samples(truth, mask)
        assert out[2, 3] == 0.7
        assert np.count_nonzero(out) == 1

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_samples(np.zeros((4, 4)), np.zeros((4, 5), dtype=bool))


class TestHardConstraint:
    def test_matches_prediction_when_already_consistent(self, rng):
        truth = rng.random((5, 5))
        mask = rng.random((5, 5)) < 0.4
        samples = apply_samples(truth, mask)
        pred = np.where(mask, samples, rng.random((5, 5)))
        assert np.array_equal(hard_constraint(pred, mask, samples), pred)

    def test_single_sample(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 2] = True
        samples = np.zeros((4, 4))
        samples[1, 2] = 0.5
        out = hard_constraint(np.zeros((4, 4)), mask, samples)
        assert out[1, 2] == 0.5
        assert np.count_nonzero(out) == 1

    def test_empty_mask_returns_prediction(self, rng):
        pred = rng.random((4, 4))
        out = hard_constraint(pred, np.zeros((4, 4), dtype=bool), np.zeros((4, 4)))
        assert np.array_equal(out, pred)

    def test_projection_idempotent(self, rng):
        for _ in range(20):
            pred = rng.random((8, 8))
            mask = rng.random((8, 8)) < 0.3
            samples = np.where(mask, rng.random((8, 8)), 0.0)
            once = hard_constraint(pred, mask, samples)
            assert np.array_equal(hard_constraint(once, mask, samples), once)

    def test_rejects_nonzero_samples_off_mask(self):
        samples = np.full((3, 3), 0.2)
        with pytest.raises(ValueError, match="zero off-mask"):
            hard_constraint(np.zeros((3, 3)), np.zeros((3, 3), dtype=bool), samples)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            hard_constraint(np.zeros((3, 3)), np.zeros((3, 4), dtype=bool), np.zeros((3, 3)))


class TestAssembleCondition:
    def test_four_planes_without_guidance(self, toy_scene):
        mask = np.zeros(toy_scene.shape, dtype=bool)
        mask[toy_scene.tx] = True
        stack = assemble_condition(toy_scene, mask)
        assert stack.guidance is None
        assert stack.planes().shape == (4, *toy_scene.shape)

    def test_five_planes_with_guidance(self, toy_scene):
        mask = np.zeros(toy_scene.shape, dtype=bool)
        mask[toy_scene.tx] = True
        guidance = np.zeros(toy_scene.shape)
        stack = assemble_condition(toy_scene, mask, guidance)
        planes = stack.planes()
        assert planes.shape == (5, *toy_scene.shape)
        assert np.array_equal(planes[4], guidance)

    def test_mask_on_building_rejected(self, toy_scene):
        mask = toy_scene.building.copy()
        with pytest.raises(ValueError, match="overlaps building"):
            assemble_condition(toy_scene, mask)

    def test_samples_equal_truth_on_mask(self, toy_scene, rng):
        for _ in range(5):
            mask = (rng.random(toy_scene.shape) < 0.2) & ~toy_scene.building
            stack = assemble_condition(toy_scene, mask)
            assert np.array_equal(stack.samples[mask], toy_scene.truth[mask])
            assert np.all(stack.samples[~mask] == 0.0)


class TestSceneAndValidation:
    def test_tx_out_of_bounds(self):
        with pytest.raises(ValueError, match="outside raster bounds"):
            Scene(0, np.zeros((4, 4), dtype=bool), (4, 0), np.zeros((4, 4)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions differ"):
            Scene(0, np.zeros((4, 4), dtype=bool), (0, 0), np.zeros((4, 5)))

    def test_scene_arrays_readonly(self, toy_scene):
        with pytest.raises(ValueError):
            toy_scene.truth[0, 0] = 0.3

    def test_as_grid_rejects_nonfinite(self):
        bad = np.zeros((3, 3))
        bad[1, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            as_grid(bad)

    def test_as_grid_unit_range(self):
        with pytest.raises(ValueError, match="outside"):
            as_grid(np.full((2, 2), 1.5), unit=True)

    def test_clamp_unit_warns_and_clips(self, caplog):
        noisy = np.array([[1.2, -0.1], [0.5, 0.5]])
        with caplog.at_level("WARNING"):
            out = clamp_unit(noisy, what="test field")
        assert "clamping" in caplog.text
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_clamp_unit_silent_in_range(self, caplog):
        clean = np.array([[0.0, 1.0]])
        with caplog.at_level("WARNING"):
            out = clamp_unit(clean)
        assert caplog.text == ""
        assert out is clean

    def test_tx_onehot(self):
        one = tx_onehot((3, 4), (1, 2))
        assert one[1, 2] and one.sum() == 1
        with pytest.raises(ValueError):
            tx_onehot((3, 4), (3, 0))
