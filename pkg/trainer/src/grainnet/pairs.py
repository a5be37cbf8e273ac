"""Labeled region-pair examples harvested from tracked label volumes.

Candidate pairs are regions on consecutive slices whose pixels overlap.
A pair is "same grain" when both regions belong to one connected
component of the full 3-D volume, which is the ground truth the
similarity scorer is trained to reproduce.  Crops are built exactly the
way the tracker builds them at inference time: the union of the two
region bounding boxes, resampled to a fixed square with nearest-neighbor
lookups at ``floor((i + 0.5) * src / crop)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError

_CROSS_3D = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class PairExample:
    z: int
    last_id: int
    this_id: int
    same: bool


def volume_components(volume: np.ndarray) -> np.ndarray:
    """6-connected components computed separately per label value."""
    components = np.zeros(volume.shape, np.int64)
    next_id = 1
    for value in np.unique(volume):
        if value == 0:
            continue
        marked, count = ndimage.label(volume == value, structure=_CROSS_3D)
        components[marked > 0] = marked[marked > 0] + (next_id - 1)
        next_id += count
    return components


def region_table(slice_labels: np.ndarray) -> dict[int, tuple[slice, slice]]:
    """Bounding box per nonzero label value on one slice."""
    table: dict[int, tuple[slice, slice]] = {}
    for value in np.unique(slice_labels):
        if value == 0:
            continue
        rows, cols = np.nonzero(slice_labels == value)
        table[int(value)] = (
            slice(int(rows.min()), int(rows.max()) + 1),
            slice(int(cols.min()), int(cols.max()) + 1),
        )
    return table


def _union_window(
    a: tuple[slice, slice], b: tuple[slice, slice]
) -> tuple[slice, slice]:
    return (
        slice(min(a[0].start, b[0].start), max(a[0].stop, b[0].stop)),
        slice(min(a[1].start, b[1].start), max(a[1].stop, b[1].stop)),
    )


def _resample(mask: np.ndarray, crop: int) -> np.ndarray:
    src_h, src_w = mask.shape
    rows = np.floor((np.arange(crop) + 0.5) * src_h / crop).astype(np.intp)
    cols = np.floor((np.arange(crop) + 0.5) * src_w / crop).astype(np.intp)
    return mask[np.ix_(rows, cols)]


def pair_crop(
    last_slice: np.ndarray,
    this_slice: np.ndarray,
    last_id: int,
    this_id: int,
    crop: int,
) -> np.ndarray:
    """(crop, crop, 2) float32 raster: channel 0 last region, 1 this region."""
    last_box = region_table(np.where(last_slice == last_id, last_id, 0)).get(last_id)
    this_box = region_table(np.where(this_slice == this_id, this_id, 0)).get(this_id)
    if last_box is None or this_box is None:
        raise DataError(f"pair ({last_id}, {this_id}) names an absent region")
    window = _union_window(last_box, this_box)
    out = np.zeros((crop, crop, 2), np.float32)
    out[:, :, 0] = _resample(last_slice[window] == last_id, crop)
    out[:, :, 1] = _resample(this_slice[window] == this_id, crop)
    return out


def harvest_pairs(volume: np.ndarray) -> list[PairExample]:
    """All overlapping consecutive-slice region pairs, labeled by identity.

    Region identity on each slice is the raw label value; a pair counts
    as the same grain when the two regions share a 6-connected component
    of their label value in the full volume — the same definition of a
    grain the volume itself encodes.
    """
    if volume.ndim != 3 or volume.shape[0] < 2:
        raise DataError("pair harvesting needs a (slices, h, w) volume with >= 2 slices")
    components = volume_components(volume)

    def component_sets(z: int) -> dict[int, frozenset[int]]:
        flat_labels = volume[z].ravel()
        flat_comps = components[z].ravel()
        keep = flat_labels != 0
        sets: dict[int, set[int]] = {}
        for value, comp in zip(flat_labels[keep], flat_comps[keep]):
            sets.setdefault(int(value), set()).add(int(comp))
        return {value: frozenset(comps) for value, comps in sets.items()}

    examples: list[PairExample] = []
    last_sets = component_sets(0)
    for z in range(1, volume.shape[0]):
        this_sets = component_sets(z)
        last, this = volume[z - 1], volume[z]
        stacked = (last != 0) & (this != 0)
        candidates = {
            (int(a), int(b)) for a, b in zip(last[stacked], this[stacked])
        }
        for last_id, this_id in sorted(candidates):
            same = bool(last_sets[last_id] & this_sets[this_id])
            examples.append(PairExample(z=z, last_id=last_id, this_id=this_id, same=same))
        last_sets = this_sets
    return examples


def pair_batch(
    volume: np.ndarray, examples: list[PairExample], crop: int
) -> tuple[np.ndarray, np.ndarray]:
    """Stack examples into ((n, 2, crop, crop) float32, (n,) int64) arrays."""
    inputs = np.zeros((len(examples), 2, crop, crop), np.float32)
    targets = np.zeros(len(examples), np.int64)
    for i, ex in enumerate(examples):
        raster = pair_crop(volume[ex.z - 1], volume[ex.z], ex.last_id, ex.this_id, crop)
        inputs[i] = raster.transpose(2, 0, 1)
        targets[i] = int(ex.same)
    return inputs, targets
