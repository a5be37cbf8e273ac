"""Adaptive weight fields and the selective loss evaluator.

The production code is vectorized + jitted; every numeric claim here is
checked against the double-loop reference in oracles.py or against values
computed by hand and frozen as literals.
"""

import json

import numpy as np
import pytest

import oracles
from conftest import random_mask
from grainstack import (
    BoundaryGrid,
    ConsistencyError,
    FormatError,
    ParameterError,
    ProbabilityGrid,
    ResolutionError,
    ValidationError,
    WeightParams,
    class_balance_weights,
    compute_weight_field,
    evaluate_loss,
    load_weight_field,
    save_weight_field,
)

# 5x5 mask, full-height ink column at x=2: two 2x5 grains, deepest distance 2.
COLUMN_MASK = np.zeros((5, 5), np.uint8)
COLUMN_MASK[:, 2] = 1
# Frozen by hand: 1 + 10 * exp(-(2-1)^2 / (2 * (2/2.58)^2))
COLUMN_W_BCK_AT_X1 = 5.351563009073568
COLUMN_SIGMA = 0.7751937984496123  # 2 / 2.58


def unbalanced() -> WeightParams:
    return WeightParams(class_balance="none")


class TestWeightParams:
    def test_defaults(self):
        p = WeightParams()
        assert (p.w0, p.gamma, p.dilate_radius) == (10.0, 2.58, 2.0)
        assert p.class_balance == "frequency"

    def test_validation(self):
        with pytest.raises(ParameterError):
            WeightParams(w0=-1.0)
        with pytest.raises(ParameterError):
            WeightParams(gamma=0.0)
        with pytest.raises(ParameterError):
            WeightParams(dilate_radius=-0.5)
        with pytest.raises(ParameterError):
            WeightParams(class_balance="median")


class TestClassBalance:
    def test_ten_percent_boundary(self):
        # 100 pixels, 10 of them ink: ink weighs 100/20, interior 100/180.
        mask = np.zeros((10, 10), np.uint8)
        mask[0, :] = 1
        w_c = class_balance_weights(BoundaryGrid(mask))
        assert w_c[0, 0] == 5.0
        assert w_c[5, 5] == 0.5555555555555556

    def test_half_boundary_is_uniform(self):
        mask = np.zeros((4, 4), np.uint8)
        mask[:2, :] = 1
        w_c = class_balance_weights(BoundaryGrid(mask))
        np.testing.assert_array_equal(w_c, np.ones((4, 4)))

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            class_balance_weights(BoundaryGrid(np.zeros((4, 4), np.uint8)))
        with pytest.raises(ValidationError):
            class_balance_weights(BoundaryGrid(np.ones((4, 4), np.uint8)))


class TestFieldAgainstOracle:
    @pytest.mark.parametrize("balance", ["frequency", "none"])
    def test_random_masks(self, rng, balance):
        params = WeightParams(class_balance=balance)
        for trial in range(8):
            mask = random_mask(rng, shape=(24, 24), n_seeds=5)
            field = compute_weight_field(BoundaryGrid(mask), params)
            w_bck, w_obj, m_d, per_grain = oracles.brute_weight_field(
                mask, class_balance=balance
            )
            np.testing.assert_allclose(field.w_bck, w_bck, rtol=1e-12, atol=0)
            np.testing.assert_allclose(field.w_obj, w_obj, rtol=1e-12, atol=0)
            np.testing.assert_array_equal(field.m_d, m_d)
            assert field.per_grain == per_grain

    def test_nondefault_parameters(self, rng):
        params = WeightParams(w0=3.5, gamma=1.9, dilate_radius=3.0, class_balance="none")
        mask = random_mask(rng, shape=(28, 28), n_seeds=6)
        field = compute_weight_field(BoundaryGrid(mask), params)
        w_bck, w_obj, m_d, per_grain = oracles.brute_weight_field(
            mask, w0=3.5, gamma=1.9, dilate_radius=3.0, class_balance="none"
        )
        np.testing.assert_allclose(field.w_bck, w_bck, rtol=1e-12, atol=0)
        np.testing.assert_allclose(field.w_obj, w_obj, rtol=1e-12, atol=0)
        np.testing.assert_array_equal(field.m_d, m_d)
        assert field.per_grain == per_grain

    def test_boundary_tie_goes_to_smaller_grain_id(self):
        # Ink column exactly between two grains: both sides at distance 1.
        field = compute_weight_field(BoundaryGrid(COLUMN_MASK), unbalanced())
        w_bck, w_obj, _, _ = oracles.brute_weight_field(
            COLUMN_MASK, class_balance="none"
        )
        np.testing.assert_allclose(field.w_bck, w_bck, rtol=1e-12)
        np.testing.assert_allclose(field.w_obj, w_obj, rtol=1e-12)


class TestAnchors:
    def test_column_mask_frozen_values(self):
        field = compute_weight_field(BoundaryGrid(COLUMN_MASK), unbalanced())
        assert field.per_grain == {
            1: (2.0, COLUMN_SIGMA),
            2: (2.0, COLUMN_SIGMA),
        }
        assert field.w_bck[2, 1] == pytest.approx(COLUMN_W_BCK_AT_X1, abs=1e-12)

    def test_object_weight_peaks_exactly_on_boundary(self):
        field = compute_weight_field(BoundaryGrid(COLUMN_MASK), unbalanced())
        # d = 0 there, so the Gaussian is exactly 1: w_obj = w_c + w0, no fuzz.
        assert (field.w_obj[:, 2] == 1.0 + 10.0).all()

    def test_background_weight_peaks_exactly_at_deepest_pixel(self, rng):
        mask = random_mask(rng, shape=(24, 24), n_seeds=4)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams(class_balance="none"))
        from grainstack import connected_components, distance_transform

        labels = connected_components(BoundaryGrid(mask)).data
        dist = distance_transform(BoundaryGrid(mask)).data
        for grain_id, (max_dis, _) in field.per_grain.items():
            inside = labels == grain_id
            deepest = inside & (dist == max_dis)
            assert deepest.any()
            assert (field.w_bck[deepest] == 1.0 + 10.0).all()

    def test_weights_never_fall_below_class_weight(self, rng):
        mask = random_mask(rng, shape=(24, 24), n_seeds=5)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        w_c = class_balance_weights(BoundaryGrid(mask))
        assert (field.w_bck >= w_c).all()
        assert (field.w_obj >= w_c).all()

    def test_single_pixel_grain_gets_unit_scale(self):
        # A lone interior pixel ringed by ink: max_dis = 1, sigma = 1/gamma.
        mask = np.ones((3, 3), np.uint8)
        mask[1, 1] = 0
        field = compute_weight_field(BoundaryGrid(mask), unbalanced())
        assert field.per_grain == {1: (1.0, 1.0 / 2.58)}

    def test_small_grains_decay_faster_than_large(self):
        # One 3-wide and one 11-wide grain split by a column of ink: at equal
        # offset from the boundary the small grain's weight has fallen more.
        mask = np.zeros((7, 15), np.uint8)
        mask[:, 3] = 1
        field = compute_weight_field(BoundaryGrid(mask), unbalanced())
        (md_small, sg_small) = field.per_grain[1]
        (md_large, sg_large) = field.per_grain[2]
        assert md_small < md_large and sg_small < sg_large
        assert field.w_obj[3, 2] < field.w_obj[3, 4]  # 1 px into each grain

    def test_amplitude_scales_linearly(self, rng):
        mask = random_mask(rng, shape=(20, 20), n_seeds=4)
        lo = compute_weight_field(BoundaryGrid(mask), WeightParams(w0=5.0))
        hi = compute_weight_field(BoundaryGrid(mask), WeightParams(w0=10.0))
        w_c = class_balance_weights(BoundaryGrid(mask))
        np.testing.assert_allclose(
            hi.w_bck - w_c, 2.0 * (lo.w_bck - w_c), rtol=1e-12, atol=1e-12
        )


class TestComputeErrors:
    def test_empty_mask_rejected(self):
        with pytest.raises(ValidationError):
            compute_weight_field(BoundaryGrid(np.zeros((4, 4), np.uint8)), WeightParams())

    def test_all_ink_rejected(self):
        with pytest.raises(ValidationError):
            compute_weight_field(BoundaryGrid(np.ones((4, 4), np.uint8)), WeightParams())


def _random_probability(rng, shape) -> ProbabilityGrid:
    p1 = rng.random(shape, dtype=np.float32)
    return ProbabilityGrid(np.stack([1.0 - p1, p1], axis=-1).astype(np.float32))


class TestLoss:
    def test_matches_double_loop(self, rng):
        params = WeightParams()
        for trial in range(12):
            mask = random_mask(rng, shape=(12, 12), n_seeds=3)
            field = compute_weight_field(BoundaryGrid(mask), params)
            pred = _random_probability(rng, (12, 12))
            got = evaluate_loss(pred, field)
            total, terms, background = oracles.double_loop_loss(
                pred.data.astype(np.float64), field.w_bck, field.w_obj, field.m_d
            )
            assert got.total == pytest.approx(total, rel=1e-12)
            np.testing.assert_allclose(got.terms, terms, rtol=1e-12, atol=0)
            np.testing.assert_array_equal(got.background_branch, background)

    def test_branch_rule(self, rng):
        mask = random_mask(rng, shape=(16, 16), n_seeds=4)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        got = evaluate_loss(_random_probability(rng, (16, 16)), field)
        want = field.w_bck >= field.w_obj * field.m_d
        np.testing.assert_array_equal(got.background_branch, want)
        # Outside the dilated band the object branch can never fire.
        assert got.background_branch[field.m_d == 0].all()

    def test_perfect_onehot_prediction_has_zero_loss(self, rng):
        mask = random_mask(rng, shape=(16, 16), n_seeds=4)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        background = field.w_bck >= field.w_obj * field.m_d
        p = np.zeros((16, 16, 2), np.float32)
        p[:, :, 0] = background
        p[:, :, 1] = ~background
        got = evaluate_loss(ProbabilityGrid(p), field)
        assert got.total == 0.0
        assert got.clamped == 0

    def test_loss_is_nonnegative(self, rng):
        mask = random_mask(rng, shape=(12, 12), n_seeds=3)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        for trial in range(5):
            got = evaluate_loss(_random_probability(rng, (12, 12)), field)
            assert got.total >= 0.0

    def test_zero_probability_is_clamped_and_counted(self, rng):
        mask = random_mask(rng, shape=(12, 12), n_seeds=3)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        background = field.w_bck >= field.w_obj * field.m_d
        # Worst possible prediction: certainty in the wrong channel everywhere.
        p = np.zeros((12, 12, 2), np.float32)
        p[:, :, 0] = ~background
        p[:, :, 1] = background
        got = evaluate_loss(ProbabilityGrid(p), field)
        assert got.clamped == mask.size
        weight = np.where(background, field.w_bck, field.w_obj)
        expected = float(np.sum(weight) * -np.log(1e-12))
        assert got.total == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        mask = random_mask(rng, shape=(12, 12), n_seeds=3)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        with pytest.raises(ConsistencyError):
            evaluate_loss(_random_probability(rng, (10, 12)), field)


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        mask = random_mask(rng, shape=(20, 20), n_seeds=4)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        path = tmp_path / "f.gsr"
        save_weight_field(field, path)
        back = load_weight_field(path)
        # Pixel weights survive at float32 precision, metadata exactly.
        np.testing.assert_allclose(back.w_bck, field.w_bck, rtol=1e-6)
        np.testing.assert_allclose(back.w_obj, field.w_obj, rtol=1e-6)
        np.testing.assert_array_equal(back.m_d, field.m_d)
        assert back.params == field.params
        assert back.per_grain == field.per_grain

    def test_sidecar_has_exactly_the_documented_keys(self, tmp_path, rng):
        mask = random_mask(rng, shape=(16, 16), n_seeds=3)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        save_weight_field(field, tmp_path / "f.gsr")
        doc = json.loads((tmp_path / "f.json").read_text())
        assert set(doc) == {"w0", "gamma", "dilate_radius", "class_balance", "per_grain"}

    def test_missing_sidecar(self, tmp_path, rng):
        mask = random_mask(rng, shape=(16, 16), n_seeds=3)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        save_weight_field(field, tmp_path / "f.gsr")
        (tmp_path / "f.json").unlink()
        with pytest.raises(ResolutionError):
            load_weight_field(tmp_path / "f.gsr")

    def test_sidecar_extra_key_rejected(self, tmp_path, rng):
        mask = random_mask(rng, shape=(16, 16), n_seeds=3)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        save_weight_field(field, tmp_path / "f.gsr")
        doc = json.loads((tmp_path / "f.json").read_text())
        doc["note"] = "x"
        (tmp_path / "f.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            load_weight_field(tmp_path / "f.gsr")

    def test_wrong_channel_count_rejected(self, tmp_path):
        from grainstack import write_gsr

        write_gsr(np.zeros((4, 4, 2), np.float32), tmp_path / "f.gsr")
        (tmp_path / "f.json").write_text("{}")
        with pytest.raises(FormatError):
            load_weight_field(tmp_path / "f.gsr")

    def test_corrupt_band_channel_rejected(self, tmp_path, rng):
        from grainstack import write_gsr

        mask = random_mask(rng, shape=(16, 16), n_seeds=3)
        field = compute_weight_field(BoundaryGrid(mask), WeightParams())
        save_weight_field(field, tmp_path / "f.gsr")
        stack = np.stack(
            [
                field.w_bck.astype(np.float32),
                field.w_obj.astype(np.float32),
                np.full((16, 16), 0.5, np.float32),
            ],
            axis=2,
        )
        write_gsr(stack, tmp_path / "f.gsr")
        with pytest.raises(ValidationError):
            load_weight_field(tmp_path / "f.gsr")
