"""Pair harvesting and crop geometry for the similarity classifier."""

from __future__ import annotations

import numpy as np
import pytest

from grainnet.errors import DataError
from grainnet.pairs import (
    PairExample,
    harvest_pairs,
    pair_batch,
    pair_crop,
    region_table,
    volume_components,
)


def two_slice_volume() -> np.ndarray:
    """Left grain persists; right grain gets a fresh label on slice 1."""
    volume = np.zeros((2, 6, 6), np.int64)
    volume[:, :, :3] = 1
    volume[0, :, 3:] = 2
    volume[1, :, 3:] = 3
    return volume


class TestHarvest:
    def test_persisting_and_relabeled_grains(self):
        examples = harvest_pairs(two_slice_volume())
        assert examples == [
            PairExample(z=1, last_id=1, this_id=1, same=True),
            PairExample(z=1, last_id=2, this_id=3, same=False),
        ]

    def test_disjoint_regions_are_not_candidates(self):
        volume = np.zeros((2, 6, 6), np.int64)
        volume[0, :2, :2] = 4  # top-left on slice 0 only
        volume[1, 4:, 4:] = 4  # bottom-right on slice 1 only
        assert harvest_pairs(volume) == []

    def test_split_grain_keeps_both_halves_same(self):
        volume = np.zeros((2, 6, 6), np.int64)
        volume[0] = 7
        volume[1, :2] = 7   # two disconnected in-plane pieces of the
        volume[1, 4:] = 7   # same value, each overlapping the parent
        examples = harvest_pairs(volume)
        assert examples == [PairExample(z=1, last_id=7, this_id=7, same=True)]

    def test_needs_at_least_two_slices(self):
        with pytest.raises(DataError, match=">= 2 slices"):
            harvest_pairs(np.ones((1, 4, 4), np.int64))

    def test_simulated_volume_yields_balanced_examples(self, label_volume):
        examples = harvest_pairs(label_volume)
        assert len(examples) > 100
        same = sum(e.same for e in examples)
        assert 0 < same < len(examples)
        # deterministic and sorted within each slice transition
        assert examples == harvest_pairs(label_volume)
        for z in range(1, label_volume.shape[0]):
            rows = [(e.last_id, e.this_id) for e in examples if e.z == z]
            assert rows == sorted(rows)


class TestComponents:
    def test_per_value_components_do_not_merge_across_values(self):
        volume = np.zeros((1, 2, 2), np.int64)
        volume[0] = [[1, 2], [2, 1]]
        components = volume_components(volume)
        assert len(np.unique(components)) == 4  # every pixel its own grain

    def test_vertical_continuity_joins_slices(self):
        volume = np.zeros((3, 2, 2), np.int64)
        volume[:, 0, 0] = 9
        components = volume_components(volume)
        column = components[:, 0, 0]
        assert (column == column[0]).all() and column[0] > 0

    def test_region_table_bounding_boxes(self):
        grid = np.zeros((5, 7), np.int64)
        grid[1:3, 2:6] = 4
        table = region_table(grid)
        assert table == {4: (slice(1, 3), slice(2, 6))}


class TestCrops:
    def test_union_bbox_and_nearest_neighbor_resample(self):
        last = np.zeros((8, 8), np.int64)
        this = np.zeros((8, 8), np.int64)
        last[0:4, 0:4] = 5   # top-left 4x4
        this[2:8, 2:8] = 6   # bottom-right 6x6; union bbox is all 8x8
        crop = pair_crop(last, this, 5, 6, crop=4)
        assert crop.shape == (4, 4, 2) and crop.dtype == np.float32
        # manual resample: source index floor((i + 0.5) * 8 / 4) = 1,3,5,7
        picks = np.array([1, 3, 5, 7])
        assert np.array_equal(
            crop[:, :, 0], (last[np.ix_(picks, picks)] == 5).astype(np.float32)
        )
        assert np.array_equal(
            crop[:, :, 1], (this[np.ix_(picks, picks)] == 6).astype(np.float32)
        )

    def test_upsampling_small_regions(self):
        last = np.zeros((4, 4), np.int64)
        this = np.zeros((4, 4), np.int64)
        last[1, 1] = 2
        this[1, 1] = 2
        crop = pair_crop(last, this, 2, 2, crop=6)
        # union bbox is the single pixel; every crop cell maps onto it
        assert crop.min() == 1.0

    def test_absent_region_rejected(self):
        grid = np.ones((4, 4), np.int64)
        with pytest.raises(DataError, match="absent"):
            pair_crop(grid, grid, 1, 3, crop=4)

    def test_batch_layout(self):
        volume = two_slice_volume()
        examples = harvest_pairs(volume)
        inputs, targets = pair_batch(volume, examples, crop=8)
        assert inputs.shape == (2, 2, 8, 8) and inputs.dtype == np.float32
        assert targets.tolist() == [1, 0]
        # channel order: 0 holds the previous slice's region
        raster = pair_crop(volume[0], volume[1], 1, 1, crop=8)
        assert np.array_equal(inputs[0], raster.transpose(2, 0, 1))
