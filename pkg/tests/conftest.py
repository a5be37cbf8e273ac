"""Shared fixtures. Simulation outputs are session-cached; they are the
slowest inputs the suite needs and every module reuses the same handful."""

from __future__ import annotations

import numpy as np
import pytest

from grainstack import (
    LabelGrid,
    PottsConfig,
    labels_to_boundary,
    potts_grow,
    relabel_regions,
)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260814)


@pytest.fixture(scope="session")
def small_run():
    """64x64x8 coarsened polycrystal; the workhorse for slice-level tests."""
    return potts_grow(PottsConfig(width=64, height=64, depth=8, q=64, steps=120, seed=3))


@pytest.fixture(scope="session")
def small_slices(small_run):
    return [relabel_regions(LabelGrid(small_run.volume[z])) for z in range(8)]


@pytest.fixture(scope="session")
def small_masks(small_slices):
    return [labels_to_boundary(s, neighborhood=8) for s in small_slices]


@pytest.fixture(scope="session")
def flat_run():
    """Single-layer section; coarsens freely (no interlayer pinning)."""
    return potts_grow(PottsConfig(width=128, height=128, depth=1, q=64, steps=100, seed=1))


@pytest.fixture(scope="session")
def tracking_run():
    """Deep stack coarsened long enough that slice-to-slice overlap dominates."""
    return potts_grow(PottsConfig(width=64, height=64, depth=32, q=64, steps=400, seed=1))


def random_labels(rng, shape, n_regions):
    """Arbitrary label image (not spatially coherent) for metric identities."""
    return rng.integers(1, n_regions + 1, size=shape).astype(np.int64)


def random_mask(rng, shape=(64, 64), n_seeds=10):
    """A plausible boundary mask: Voronoi regions of random seeds, 8-way edges."""
    h, w = shape
    ys = rng.integers(0, h, size=n_seeds)
    xs = rng.integers(0, w, size=n_seeds)
    gy, gx = np.mgrid[0:h, 0:w]
    d2 = (gy[:, :, None] - ys) ** 2 + (gx[:, :, None] - xs) ** 2
    owner = np.argmin(d2, axis=2)
    mask = np.zeros((h, w), dtype=np.uint8)
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        sy = slice(max(0, -dy), h - max(0, dy))
        sx = slice(max(0, -dx), w - max(0, dx))
        ty = slice(max(0, dy), h - max(0, -dy))
        tx = slice(max(0, dx), w - max(0, -dx))
        differs = owner[sy, sx] != owner[ty, tx]
        mask[sy, sx] |= differs
    return mask
