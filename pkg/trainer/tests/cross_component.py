"""Cross-component parity helpers.

This is the one place the test suite imports the sibling toolkit as a
library: to produce weight-field files and reference loss values that
the trainer is contractually required to match through the file
interface.  The trainer itself never imports the toolkit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

import grainstack.model as gmodel
import grainstack.weights as gweights

from grainnet.formats import load_weight_planes
from grainnet.loss import adaptive_loss


def write_weight_fixture(path: Path, seed: int, size: int = 32) -> Path:
    """Random boundary mask -> toolkit weight field saved at `path`."""
    rng = np.random.default_rng(seed)
    mask = np.zeros((size, size), np.uint8)
    # closed random partition: vertical + horizontal cuts guarantee boundaries
    for x in sorted(rng.choice(np.arange(2, size - 2), 3, replace=False)):
        mask[:, x] = 1
    for y in sorted(rng.choice(np.arange(2, size - 2), 3, replace=False)):
        mask[y, :] = 1
    speckle = rng.random((size, size)) < 0.02
    mask[speckle] = 1
    field = gweights.compute_weight_field(
        gmodel.BoundaryGrid(mask), gweights.WeightParams()
    )
    gweights.save_weight_field(field, path)
    return path


def reference_loss(logits: torch.Tensor, field_path: Path) -> float:
    """Toolkit evaluate_loss on the softmax of `logits`, via the saved field."""
    field = gweights.load_weight_field(field_path)
    probabilities = torch.softmax(logits.detach().double(), dim=0).numpy()
    grid = gmodel.ProbabilityGrid(
        np.ascontiguousarray(probabilities.transpose(1, 2, 0).astype(np.float32))
    )
    return float(gweights.evaluate_loss(grid, field).total)


def trainer_loss(logits: torch.Tensor, field_path: Path) -> float:
    """Trainer adaptive_loss fed from the same file, summed like the toolkit."""
    planes = load_weight_planes(field_path)
    value = adaptive_loss(
        logits.double(),
        torch.from_numpy(planes.w_bck),
        torch.from_numpy(planes.w_obj),
        torch.from_numpy(planes.m_d),
        reduction="sum",
    )
    return float(value)
