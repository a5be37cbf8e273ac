"""Training data assembly from dataset and weight-field directories.

A usable dataset directory carries a flaw-rendered gray stack (`gray.json`),
the matching boundary stack (`boundaries.json`), and optionally the label
stack (`manifest.json`) used for validation scoring.  Weight fields come
from a separate directory holding a `weights.json` stack of 3-channel
rasters, one per slice.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .formats import (
    load_weight_planes,
    read_boundary,
    read_gray,
    read_labels,
    read_manifest,
)


@dataclass(frozen=True)
class TileCrop:
    """One training window: slice index plus the top-left corner."""

    z: int
    y: int
    x: int


class SliceDataset:
    """Aligned gray/boundary/weight stacks with crop-level access.

    Inputs pair each gray slice with the previous slice's boundary mask
    (zeros for the first slice), mirroring how inference propagates masks
    forward through the stack.
    """

    def __init__(self, dataset_dir: str | Path, weights_dir: str | Path) -> None:
        dataset_dir = Path(dataset_dir)
        weights_dir = Path(weights_dir)
        gray_manifest = dataset_dir / "gray.json"
        if not gray_manifest.is_file():
            raise DataError(
                f"{dataset_dir}: no gray.json — generate the dataset with flaw "
                "rendering enabled"
            )
        self.gray = [read_gray(p) for p in read_manifest(gray_manifest).paths]
        self.boundaries = [
            read_boundary(p)
            for p in read_manifest(dataset_dir / "boundaries.json").paths
        ]
        self.weights = [
            load_weight_planes(p)
            for p in read_manifest(weights_dir / "weights.json").paths
        ]
        labels_manifest = dataset_dir / "manifest.json"
        self.labels = (
            [read_labels(p) for p in read_manifest(labels_manifest).paths]
            if labels_manifest.is_file()
            else None
        )

        counts = {len(self.gray), len(self.boundaries), len(self.weights)}
        if self.labels is not None:
            counts.add(len(self.labels))
        if len(counts) != 1:
            raise DataError(f"{dataset_dir}: stacks disagree on slice count: {counts}")
        shapes = {g.shape for g in self.gray}
        shapes.update(b.shape for b in self.boundaries)
        shapes.update(w.w_bck.shape for w in self.weights)
        if len(shapes) != 1:
            raise DataError(f"{dataset_dir}: stacks disagree on slice shape: {shapes}")
        self.shape = shapes.pop()
        if not self.gray:
            raise DataError(f"{dataset_dir}: dataset holds no slices")

    def __len__(self) -> int:
        return len(self.gray)

    @property
    def holdout_index(self) -> int | None:
        """Last slice, reserved for validation when there is room to spare."""
        return len(self) - 1 if len(self) >= 3 else None

    def previous_mask(self, z: int) -> np.ndarray:
        if z == 0:
            return np.zeros(self.shape, np.uint8)
        return self.boundaries[z - 1]

    def tile_pool(
        self, tile: int, count: int, seed: int, *, exclude: int | None = None
    ) -> list[TileCrop]:
        """Deterministic crop positions over the training slices."""
        height, width = self.shape
        if tile > height or tile > width:
            raise DataError(f"tile {tile} exceeds slice shape {self.shape}")
        slices = [z for z in range(len(self)) if z != exclude]
        rng = np.random.default_rng(seed)
        return [
            TileCrop(
                z=int(rng.choice(slices)),
                y=int(rng.integers(0, height - tile + 1)),
                x=int(rng.integers(0, width - tile + 1)),
            )
            for _ in range(count)
        ]

    def materialize(
        self, crops: list[TileCrop], tile: int
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """Stack crops into (inputs, w_bck, w_obj, m_d) training tensors."""
        inputs = np.zeros((len(crops), 2, tile, tile), np.float32)
        w_bck = np.zeros((len(crops), tile, tile), np.float32)
        w_obj = np.zeros_like(w_bck)
        m_d = np.zeros_like(w_bck)
        for i, crop in enumerate(crops):
            window = (slice(crop.y, crop.y + tile), slice(crop.x, crop.x + tile))
            inputs[i, 0] = self.gray[crop.z][window]
            inputs[i, 1] = self.previous_mask(crop.z)[window]
            planes = self.weights[crop.z]
            w_bck[i] = planes.w_bck[window]
            w_obj[i] = planes.w_obj[window]
            m_d[i] = planes.m_d[window]
        return (
            torch.from_numpy(inputs),
            torch.from_numpy(w_bck),
            torch.from_numpy(w_obj),
            torch.from_numpy(m_d),
        )

    def full_slice_input(self, z: int, divisor: int) -> tuple[torch.Tensor, tuple]:
        """Whole-slice input center-cropped to a divisor-aligned shape."""
        height, width = self.shape
        ch, cw = height - height % divisor, width - width % divisor
        if min(ch, cw) == 0:
            raise DataError(f"slice shape {self.shape} too small for divisor {divisor}")
        y0, x0 = (height - ch) // 2, (width - cw) // 2
        window = (slice(y0, y0 + ch), slice(x0, x0 + cw))
        stacked = np.stack(
            [self.gray[z][window], self.previous_mask(z)[window].astype(np.float32)]
        )
        return torch.from_numpy(stacked[None].astype(np.float32)), window
