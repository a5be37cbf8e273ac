"""Partition-comparison metrics, checked against dict/double-loop oracles
and hand-frozen degenerate cases."""

import numpy as np
import pytest

import oracles
from conftest import random_labels
from grainstack import (
    ConsistencyError,
    ContingencyTable,
    ValidationError,
    adjusted_rand_index,
    compute_report,
    contingency,
    mean_average_precision,
    variation_of_information,
)


def table_as_dict(table: ContingencyTable) -> dict:
    out = {}
    for r, p in enumerate(table.pred_ids.tolist()):
        for c, g in enumerate(table.gt_ids.tolist()):
            if table.counts[r, c]:
                out[(p, g)] = int(table.counts[r, c])
    return out


class TestContingency:
    def test_matches_pair_oracle(self, rng):
        for trial in range(8):
            pred = random_labels(rng, (16, 16), 5)
            gt = random_labels(rng, (16, 16), 4)
            got = table_as_dict(contingency(pred, gt, ignore_boundary=False))
            assert got == oracles.pair_table(pred, gt, ignore_gt_zero=False)

    def test_ground_truth_ink_exclusion_is_one_sided(self, rng):
        pred = random_labels(rng, (12, 12), 4)
        gt = random_labels(rng, (12, 12), 3)
        gt[gt == 1] = 0      # carve ink into the ground truth
        pred[0, :] = 0       # and, separately, into the prediction
        got = table_as_dict(contingency(pred, gt, ignore_boundary=True))
        want = oracles.pair_table(pred, gt, ignore_gt_zero=True)
        assert got == want
        # Prediction ink survives as an ordinary row id here; only the
        # composed report masks it out.
        assert 0 in {p for p, _ in got}
        assert 0 not in {g for _, g in got}

    def test_totals(self, rng):
        pred = random_labels(rng, (10, 10), 4)
        gt = random_labels(rng, (10, 10), 3)
        table = contingency(pred, gt, ignore_boundary=False)
        assert table.total == 100
        assert table.row_totals.sum() == 100
        assert table.col_totals.sum() == 100

    def test_shape_mismatch(self):
        with pytest.raises(ConsistencyError):
            contingency(np.ones((3, 3), np.int64), np.ones((3, 4), np.int64))

    def test_non_integer_labels_rejected(self):
        with pytest.raises(ValidationError):
            contingency(np.ones((3, 3), np.float64), np.ones((3, 3), np.int64))


class TestVariationOfInformation:
    def test_matches_entropy_oracle(self, rng):
        for trial in range(8):
            pred = random_labels(rng, (16, 16), 6)
            gt = random_labels(rng, (16, 16), 5)
            table = contingency(pred, gt, ignore_boundary=False)
            got = variation_of_information(table)
            want = oracles.vi_bits(oracles.pair_table(pred, gt, ignore_gt_zero=False))
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_identity_is_zero(self, rng):
        labels = random_labels(rng, (12, 12), 5)
        vi, vi_split, vi_merge = variation_of_information(
            contingency(labels, labels, ignore_boundary=False)
        )
        assert vi == vi_split == vi_merge == 0.0

    def test_merged_halves_cost_exactly_one_bit(self):
        gt = np.repeat(np.array([[1, 2]], np.int64), 8, axis=0).repeat(8, axis=1)
        pred = np.full_like(gt, 7)
        vi, vi_split, vi_merge = variation_of_information(
            contingency(pred, gt, ignore_boundary=False)
        )
        assert (vi, vi_split, vi_merge) == (1.0, 0.0, 1.0)

    def test_split_halves_cost_exactly_one_bit(self):
        pred = np.repeat(np.array([[1, 2]], np.int64), 8, axis=0).repeat(8, axis=1)
        gt = np.full_like(pred, 7)
        vi, vi_split, vi_merge = variation_of_information(
            contingency(pred, gt, ignore_boundary=False)
        )
        assert (vi, vi_split, vi_merge) == (1.0, 1.0, 0.0)

    def test_swapping_sides_swaps_components(self, rng):
        a = random_labels(rng, (14, 14), 5)
        b = random_labels(rng, (14, 14), 4)
        vi_ab = variation_of_information(contingency(a, b, ignore_boundary=False))
        vi_ba = variation_of_information(contingency(b, a, ignore_boundary=False))
        assert vi_ab[0] == pytest.approx(vi_ba[0], rel=1e-12)
        assert vi_ab[1] == pytest.approx(vi_ba[2], rel=1e-12)
        assert vi_ab[2] == pytest.approx(vi_ba[1], rel=1e-12)

    def test_refining_prediction_moves_only_split_term(self, rng):
        gt = random_labels(rng, (16, 16), 4)
        pred = gt.copy()
        splits = []
        for region in (1, 2, 3):
            pixels = np.nonzero(pred == region)
            half = len(pixels[0]) // 2
            pred[pixels[0][:half], pixels[1][:half]] = 100 + region
            vi, vi_split, vi_merge = variation_of_information(
                contingency(pred, gt, ignore_boundary=False)
            )
            assert vi_merge == 0.0
            splits.append(vi_split)
        assert splits == sorted(splits) and splits[0] > 0.0

    def test_empty_table_rejected(self):
        table = contingency(np.zeros((2, 2), np.int64), np.zeros((2, 2), np.int64))
        with pytest.raises(ValidationError):
            variation_of_information(table)


class TestAdjustedRandIndex:
    def test_matches_comb_oracle(self, rng):
        for trial in range(8):
            pred = random_labels(rng, (16, 16), 6)
            gt = random_labels(rng, (16, 16), 5)
            table = contingency(pred, gt, ignore_boundary=False)
            want = oracles.ari_comb(oracles.pair_table(pred, gt, ignore_gt_zero=False))
            assert adjusted_rand_index(table) == pytest.approx(want, rel=1e-12)

    def test_identity_is_one(self, rng):
        labels = random_labels(rng, (12, 12), 5)
        assert adjusted_rand_index(contingency(labels, labels, ignore_boundary=False)) == 1.0

    def test_permutation_of_ids_is_invariant(self, rng):
        pred = random_labels(rng, (14, 14), 6)
        gt = random_labels(rng, (14, 14), 5)
        perm = rng.permutation(np.arange(1, 7)) + 50
        renamed = perm[pred - 1]
        t1 = contingency(pred, gt, ignore_boundary=False)
        t2 = contingency(renamed, gt, ignore_boundary=False)
        assert adjusted_rand_index(t1) == pytest.approx(
            adjusted_rand_index(t2), rel=1e-12
        )
        np.testing.assert_allclose(
            variation_of_information(t1), variation_of_information(t2), rtol=1e-12
        )

    def test_halves_vs_merged_is_exactly_zero(self):
        gt = np.repeat(np.array([[1, 2]], np.int64), 8, axis=0).repeat(8, axis=1)
        pred = np.full_like(gt, 7)
        assert adjusted_rand_index(contingency(pred, gt, ignore_boundary=False)) == 0.0

    def test_both_trivial_and_identical_is_one(self):
        ones = np.ones((4, 4), np.int64)
        assert adjusted_rand_index(contingency(ones, ones, ignore_boundary=False)) == 1.0

    def test_tiny_table_rejected(self):
        with pytest.raises(ValidationError):
            adjusted_rand_index(
                contingency(np.ones((1, 1), np.int64), np.ones((1, 1), np.int64))
            )


def _instance_image(rng, shape, n_instances):
    """Spatially blocky instance map with some ink between blocks."""
    labels = np.zeros(shape, np.int64)
    h, w = shape
    xs = np.sort(rng.choice(np.arange(2, w - 2), size=n_instances - 1, replace=False))
    edges = [0, *xs.tolist(), w]
    for i in range(n_instances):
        labels[:, edges[i] : edges[i + 1]] = i + 1
    return labels


class TestMeanAveragePrecision:
    def test_matches_exhaustive_matching(self, rng):
        for trial in range(8):
            pred = _instance_image(rng, (12, 20), int(rng.integers(2, 6)))
            gt = _instance_image(rng, (12, 20), int(rng.integers(2, 6)))
            mean_ap, per_t = mean_average_precision(pred, gt)
            for t, ap in per_t:
                assert ap == pytest.approx(
                    oracles.exhaustive_ap(pred, gt, t), abs=1e-12
                ), t
            assert mean_ap == pytest.approx(np.mean([ap for _, ap in per_t]), rel=1e-12)

    def test_perfect_match_is_one_everywhere(self, rng):
        gt = _instance_image(rng, (10, 16), 4)
        mean_ap, per_t = mean_average_precision(gt, gt)
        assert mean_ap == 1.0
        assert all(ap == 1.0 for _, ap in per_t)

    def test_ap_is_monotone_in_threshold(self, rng):
        for trial in range(5):
            pred = _instance_image(rng, (12, 20), 4)
            gt = _instance_image(rng, (12, 20), 5)
            _, per_t = mean_average_precision(pred, gt)
            aps = [ap for _, ap in per_t]
            assert aps == sorted(aps, reverse=True)

    def test_half_overlap_does_not_clear_the_half_threshold(self):
        # One whole region vs two halves: IoU is exactly 0.5, and matches
        # require strictly greater, so nothing matches even at t = 0.5.
        gt = np.repeat(np.array([[1, 2]], np.int64), 8, axis=0).repeat(8, axis=1)
        pred = np.full_like(gt, 1)
        mean_ap, per_t = mean_average_precision(pred, gt)
        assert mean_ap == 0.0

    def test_ink_is_not_an_instance(self, rng):
        pred = _instance_image(rng, (10, 16), 3)
        gt = pred.copy()
        pred_with_ink = pred.copy()
        pred_with_ink[:, 5] = 0
        # Removing a sliver of pixels into ink may shrink IoUs but must not
        # create a phantom instance with id 0.
        mean_full, _ = mean_average_precision(pred, gt)
        mean_ink, _ = mean_average_precision(pred_with_ink, gt)
        assert mean_full == 1.0
        assert 0.0 <= mean_ink <= 1.0

    def test_empty_ground_truth_rejected(self):
        with pytest.raises(ValidationError):
            mean_average_precision(np.ones((4, 4), np.int64), np.zeros((4, 4), np.int64))

    def test_empty_thresholds_rejected(self, rng):
        gt = _instance_image(rng, (8, 8), 2)
        with pytest.raises(ValidationError):
            mean_average_precision(gt, gt, thresholds=())


class TestComputeReport:
    def test_identity_report(self, rng):
        labels = random_labels(rng, (16, 16), 5)
        report = compute_report(labels, labels, ignore_boundary=False)
        assert report.vi == 0.0
        assert report.ari == 1.0
        assert report.map == 1.0

    def test_vi_decomposition_holds(self, rng):
        pred = random_labels(rng, (16, 16), 6)
        gt = random_labels(rng, (16, 16), 4)
        report = compute_report(pred, gt, ignore_boundary=False)
        assert report.vi == pytest.approx(report.vi_merge + report.vi_split, abs=1e-12)

    def test_prediction_ink_is_masked_in_vi_ari(self, small_slices):
        from grainstack import labels_to_boundary, skeletonize, connected_components

        gt = small_slices[0]
        skel = skeletonize(labels_to_boundary(gt, neighborhood=8))
        pred = connected_components(skel, connectivity=4)
        report = compute_report(pred.data, gt.data, ignore_boundary=True)
        # Region-to-region comparison: near-perfect despite the ink pixels.
        assert report.ari > 0.95
        # The same comparison without masking scores the ink as a giant
        # phantom region; the composed report must not do that.
        raw_ari = adjusted_rand_index(
            contingency(pred.data, gt.data, ignore_boundary=True)
        )
        assert raw_ari < report.ari

    def test_ink_on_both_sides_matches_manual_masking(self, rng):
        pred = random_labels(rng, (16, 16), 5)
        gt = random_labels(rng, (16, 16), 4)
        pred[rng.random((16, 16)) < 0.2] = 0
        gt[rng.random((16, 16)) < 0.2] = 0
        report = compute_report(pred, gt, ignore_boundary=True)
        keep = (pred != 0) & (gt != 0)
        table = contingency(pred[keep], gt[keep], ignore_boundary=False)
        vi, vi_split, vi_merge = variation_of_information(table)
        assert report.vi == pytest.approx(vi, rel=1e-12)
        assert report.ari == pytest.approx(adjusted_rand_index(table), rel=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConsistencyError):
            compute_report(np.ones((3, 3), np.int64), np.ones((4, 3), np.int64))

    def test_to_dict_round_trips_keys(self, rng):
        labels = random_labels(rng, (8, 8), 3)
        doc = compute_report(labels, labels, ignore_boundary=False).to_dict()
        assert set(doc) == {
            "vi", "vi_merge", "vi_split", "ari", "map", "per_threshold_ap",
        }
