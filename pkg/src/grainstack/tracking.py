"""Grain tracking across a slice stack.

Regions in consecutive slices are paired by z-projection overlap, scored by a
pluggable similarity backend, and linked greedily into global 3D labels.  The
result is a consistent labeled volume plus a full audit trail (per-pair
similarities, appearances, disappearances).

Backends
--------
``max_overlap``
    overlap_area / min(area_this, area_last) — in [0, 1] by construction.
``min_centroid``
    exp(-centroid_distance / D) with D = crop_size * sqrt(2), the diagonal of
    the crop window; distance 0 maps to 1.0 and decay is scale-aware.
``external``
    A subprocess honoring the batch protocol below, typically a trained pair
    classifier.  All candidate pairs of one slice pair go out as one batch.

External batch protocol
-----------------------
The tracker writes a directory containing

* ``pairs.gsr`` — float32 raster of shape (N * crop_size, crop_size, 2),
  row-block i holding pair i's two binary masks (channel 0 = previous slice
  region, channel 1 = current slice region);
* ``pairs.json`` — ``[{"row": i, "this_id": t, "last_id": l}, ...]``.

It then invokes the scorer with the directory path as the sole argument.  The
scorer must exit 0 and write ``scores.json``:
``[{"row": i, "similarity": s}, ...]`` with every row present and s in [0, 1].
Any deviation raises :class:`~grainstack.model.BackendError`.
"""

from __future__ import annotations

import json
import math
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .metrics import MetricReport, compute_report
from .model import (
    BackendError,
    ConsistencyError,
    GrainRegion,
    LabelGrid,
    ParameterError,
    ValidationError,
    _freeze,
)
from .morphology import relabel_regions
from . import io as gio

__all__ = [
    "BACKENDS",
    "CandidatePair",
    "SimilarityRecord",
    "TrackerConfig",
    "TrackResult",
    "regions_from_labels",
    "enumerate_candidates",
    "similarity",
    "make_pair_crop",
    "score_pairs",
    "track_stack",
    "evaluate_tracking",
]

BACKENDS = ("max_overlap", "min_centroid", "external")

#: Default wall-clock budget for one external scorer invocation, seconds.
EXTERNAL_TIMEOUT = 300.0


# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class CandidatePair:
    """A region in slice z paired with an overlapping region in slice z-1."""

    this_region: GrainRegion
    last_region: GrainRegion
    overlap_area: int            # shared z-projection pixels, >= 1
    centroid_distance: float     # Euclidean distance between centroids

    def __post_init__(self) -> None:
        if self.overlap_area < 1:
            raise ValidationError(
                f"candidate pairs require overlap >= 1 pixel, got {self.overlap_area}"
            )


@dataclass(frozen=True)
class TrackerConfig:
    """Similarity backend selection and linking policy.

    Ties in the greedy assignment break by larger overlap_area, then smaller
    predecessor id, then smaller current-slice id.
    """

    backend: str = "max_overlap"
    threshold: float = 0.5       # accept a link iff similarity >= threshold
    crop_size: int = 64          # pair-crop side for the external backend
    scorer: str | None = None    # external scorer executable
    timeout: float = EXTERNAL_TIMEOUT

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ParameterError(
                f"backend must be one of {BACKENDS}, got {self.backend!r}"
            )
        if not (0.0 <= self.threshold <= 1.0):
            raise ParameterError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.crop_size < 16:
            raise ParameterError(f"crop_size must be >= 16, got {self.crop_size}")
        if self.backend == "external" and not self.scorer:
            raise ParameterError("external backend requires a scorer executable path")
        if not (self.timeout > 0):
            raise ParameterError(f"timeout must be positive, got {self.timeout}")


@dataclass(frozen=True)
class SimilarityRecord:
    """One scored candidate pair, as it entered the greedy assignment."""

    slice_index: int             # z of the current slice
    this_id: int
    last_id: int
    overlap_area: int            # raw pixel overlap, kept unnormalized
    centroid_distance: float
    similarity: float
    chosen: bool                 # True iff this pair produced a link


@dataclass(frozen=True)
class TrackResult:
    """Outcome of tracking an ordered label stack.

    ``assignments[z]`` maps each region id of (relabeled) slice z to its
    global 3D label.  ``new_labels`` records appearances as
    (slice_index, region_id, global_label); ``terminated`` records
    disappearances as (last_slice_index, global_label) for tracks that ended
    before the final slice.  Tracks alive in the final slice are not
    terminated — the stack ended, not the grain.
    """

    assignments: tuple[dict[int, int], ...]
    new_labels: tuple[tuple[int, int, int], ...]
    terminated: tuple[tuple[int, int], ...]
    similarity_log: tuple[SimilarityRecord, ...]

    def __post_init__(self) -> None:
        for z, mapping in enumerate(self.assignments):
            globals_here = list(mapping.values())
            if len(globals_here) != len(set(globals_here)):
                raise ConsistencyError(
                    f"slice {z} assigns one global label to multiple regions"
                )

    @property
    def label_count(self) -> int:
        """Number of distinct global labels over the whole stack."""
        seen: set[int] = set()
        for mapping in self.assignments:
            seen.update(mapping.values())
        return len(seen)


# --------------------------------------------------------------------------- regions


def regions_from_labels(labels: LabelGrid, slice_index: int = 0) -> list[GrainRegion]:
    """Extract every nonzero-id region of a slice, ascending by id.

    Pixels sharing an id form one region regardless of adjacency; feed grids
    through :func:`grainstack.morphology.relabel_regions` first when ids must
    mean connected components.
    """
    data = labels.data
    h, w = data.shape
    flat = data.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_vals = flat[order]
    cuts = np.flatnonzero(np.diff(sorted_vals)) + 1
    regions: list[GrainRegion] = []
    for group in np.split(order, cuts):
        region_id = int(flat[group[0]])
        if region_id == 0:
            continue
        ys, xs = np.divmod(group, w)
        regions.append(
            GrainRegion(
                id=region_id,
                slice_index=slice_index,
                area=int(group.size),
                centroid=(float(xs.mean()), float(ys.mean())),
                bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
                grid=labels,
            )
        )
    return regions


def enumerate_candidates(
    last: LabelGrid, this: LabelGrid, *, last_slice_index: int = 0
) -> list[CandidatePair]:
    """List every (this-region, last-region) pair with overlapping footprints.

    ``last_slice_index`` sets the z recorded on the previous slice's regions;
    the current slice's regions carry ``last_slice_index + 1``.
    """
    if last.data.shape != this.data.shape:
        raise ConsistencyError(
            f"slice dimensions differ: {last.data.shape} vs {this.data.shape}"
        )
    last_regions = {r.id: r for r in regions_from_labels(last, last_slice_index)}
    this_regions = {r.id: r for r in regions_from_labels(this, last_slice_index + 1)}

    both = (last.data > 0) & (this.data > 0)
    last_ids = last.data[both].astype(np.int64)
    this_ids = this.data[both].astype(np.int64)
    if last_ids.size == 0:
        return []
    # Composite key per overlapping pixel -> exact co-occurrence counts.
    span = int(last.data.max()) + 1
    composite = this_ids * span + last_ids
    keys, counts = np.unique(composite, return_counts=True)

    pairs: list[CandidatePair] = []
    for key, count in zip(keys, counts):
        this_id = int(key // span)
        last_id = int(key % span)
        a = this_regions[this_id]
        b = last_regions[last_id]
        pairs.append(
            CandidatePair(
                this_region=a,
                last_region=b,
                overlap_area=int(count),
                centroid_distance=math.dist(a.centroid, b.centroid),
            )
        )
    return pairs


# --------------------------------------------------------------------------- scoring


def make_pair_crop(pair: CandidatePair, crop_size: int) -> np.ndarray:
    """Rasterize a candidate pair as a (crop_size, crop_size, 2) binary crop.

    Both regions are cut out of their slices at the union of the two bounding
    boxes, then resampled to the crop size with nearest-neighbor sampling
    (source pixel floor((i + 0.5) * src / crop) per axis).  Channel 0 holds
    the previous slice's region, channel 1 the current one.
    """
    if crop_size < 1:
        raise ParameterError(f"crop_size must be positive, got {crop_size}")
    ax0, ay0, ax1, ay1 = pair.last_region.bbox
    bx0, by0, bx1, by1 = pair.this_region.bbox
    x0, y0 = min(ax0, bx0), min(ay0, by0)
    x1, y1 = max(ax1, bx1), max(ay1, by1)

    src_h, src_w = y1 - y0 + 1, x1 - x0 + 1
    ys = np.floor((np.arange(crop_size) + 0.5) * src_h / crop_size).astype(np.intp)
    xs = np.floor((np.arange(crop_size) + 0.5) * src_w / crop_size).astype(np.intp)

    crop = np.zeros((crop_size, crop_size, 2), dtype=np.float32)
    for channel, region in ((0, pair.last_region), (1, pair.this_region)):
        window = region.grid.data[y0 : y1 + 1, x0 : x1 + 1] == region.id
        crop[:, :, channel] = window[np.ix_(ys, xs)].astype(np.float32)
    return crop


def _score_local(pair: CandidatePair, config: TrackerConfig) -> float:
    if config.backend == "max_overlap":
        return pair.overlap_area / min(pair.this_region.area, pair.last_region.area)
    # min_centroid: exponential decay over the crop-diagonal length scale.
    scale = config.crop_size * math.sqrt(2.0)
    return math.exp(-pair.centroid_distance / scale)


def _run_external(
    pairs: Sequence[CandidatePair], config: TrackerConfig, batch_dir: Path
) -> list[float]:
    """Write one batch, invoke the scorer, read back validated scores."""
    crop = config.crop_size
    stacked = np.zeros((len(pairs) * crop, crop, 2), dtype=np.float32)
    listing = []
    for row, pair in enumerate(pairs):
        stacked[row * crop : (row + 1) * crop] = make_pair_crop(pair, crop)
        listing.append(
            {
                "row": row,
                "this_id": pair.this_region.id,
                "last_id": pair.last_region.id,
            }
        )
    gio.write_gsr(stacked, batch_dir / "pairs.gsr")
    (batch_dir / "pairs.json").write_text(json.dumps(listing, indent=2) + "\n")

    command = [str(config.scorer), str(batch_dir)]
    try:
        proc = subprocess.run(
            command,
            capture_output=True,
            text=True,
            timeout=config.timeout,
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise BackendError(f"external scorer failed to run: {exc}") from exc
    if proc.returncode != 0:
        raise BackendError(
            f"external scorer exited with {proc.returncode}: {proc.stderr.strip()}"
        )

    scores_path = batch_dir / "scores.json"
    try:
        entries = json.loads(scores_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BackendError(f"external scorer reply unreadable: {exc}") from exc
    if not isinstance(entries, list):
        raise BackendError("scores.json must hold a list of row scores")
    scores: dict[int, float] = {}
    for entry in entries:
        try:
            row = int(entry["row"])
            value = float(entry["similarity"])
        except (TypeError, KeyError, ValueError) as exc:
            raise BackendError(f"malformed score entry {entry!r}") from exc
        if not (0.0 <= value <= 1.0) or row in scores:
            raise BackendError(f"invalid or duplicate score entry {entry!r}")
        scores[row] = value
    missing = set(range(len(pairs))) - set(scores)
    if missing:
        raise BackendError(f"scorer reply missing rows {sorted(missing)}")
    return [scores[row] for row in range(len(pairs))]


def score_pairs(
    pairs: Sequence[CandidatePair],
    config: TrackerConfig,
    *,
    batch_dir: str | Path | None = None,
) -> list[float]:
    """Score candidate pairs; external backends see one batch per call.

    ``batch_dir`` overrides the scratch directory used for the external
    protocol (useful for inspecting the exchange); local backends ignore it.
    """
    if not pairs:
        return []
    if config.backend != "external":
        return [_score_local(pair, config) for pair in pairs]
    if batch_dir is not None:
        directory = Path(batch_dir)
        directory.mkdir(parents=True, exist_ok=True)
        return _run_external(pairs, config, directory)
    with tempfile.TemporaryDirectory(prefix="grainstack-pairs-") as scratch:
        return _run_external(pairs, config, Path(scratch))


def similarity(pair: CandidatePair, config: TrackerConfig) -> float:
    """Score one candidate pair (external backends run a batch of one)."""
    return score_pairs([pair], config)[0]


# --------------------------------------------------------------------------- linking


def _greedy_links(
    pairs: Sequence[CandidatePair],
    scores: Sequence[float],
    threshold: float,
) -> set[int]:
    """Indices of accepted pairs under the argmax-with-conflicts policy.

    Each region considers only its own best-scoring predecessor (ties break
    by larger overlap, then smaller predecessor id).  Those argmax claims are
    then granted by descending score — ties by larger overlap, then smaller
    predecessor id, then smaller current id — and a region whose claim loses
    or falls below the threshold starts fresh rather than settling for a
    lesser predecessor.
    """

    def rank(i: int) -> tuple[float, int, int, int]:
        return (
            -scores[i],
            -pairs[i].overlap_area,
            pairs[i].last_region.id,
            pairs[i].this_region.id,
        )

    best: dict[int, int] = {}
    for i in range(len(pairs)):
        this_id = pairs[i].this_region.id
        if this_id not in best or rank(i) < rank(best[this_id]):
            best[this_id] = i

    taken_last: set[int] = set()
    chosen: set[int] = set()
    for i in sorted(best.values(), key=rank):
        if scores[i] < threshold:
            break
        last_id = pairs[i].last_region.id
        if last_id in taken_last:
            continue
        taken_last.add(last_id)
        chosen.add(i)
    return chosen


def track_stack(
    stack: Sequence[LabelGrid] | Iterable[LabelGrid],
    config: TrackerConfig,
) -> tuple[TrackResult, np.ndarray]:
    """Link regions through an ordered stack into a global 3D labeling.

    Each slice is first relabeled so ids are connected components.  Slice 0's
    regions all start fresh tracks; each later region inherits its
    best-scoring unclaimed predecessor label when the score clears the
    threshold, and otherwise starts a new track.  Returns the audit record
    and the uint32 labeled volume (zero-id pixels stay zero).
    """
    slices = [relabel_regions(grid) for grid in stack]
    if not slices:
        raise ValidationError("track_stack requires at least one slice")
    shape = slices[0].data.shape
    for z, grid in enumerate(slices):
        if grid.data.shape != shape:
            raise ConsistencyError(
                f"slice {z} has shape {grid.data.shape}, expected {shape}"
            )

    volume = np.zeros((len(slices),) + shape, dtype=np.uint32)
    assignments: list[dict[int, int]] = []
    new_labels: list[tuple[int, int, int]] = []
    log: list[SimilarityRecord] = []
    next_label = 1

    previous: dict[int, int] = {}
    last_seen: dict[int, int] = {}  # global label -> last slice it appeared in
    for region in regions_from_labels(slices[0], 0):
        previous[region.id] = next_label
        new_labels.append((0, region.id, next_label))
        last_seen[next_label] = 0
        next_label += 1
    assignments.append(dict(previous))

    for z in range(1, len(slices)):
        pairs = enumerate_candidates(slices[z - 1], slices[z], last_slice_index=z - 1)
        scores = score_pairs(pairs, config)
        chosen = _greedy_links(pairs, scores, config.threshold)
        for i, pair in enumerate(pairs):
            log.append(
                SimilarityRecord(
                    slice_index=z,
                    this_id=pair.this_region.id,
                    last_id=pair.last_region.id,
                    overlap_area=pair.overlap_area,
                    centroid_distance=pair.centroid_distance,
                    similarity=scores[i],
                    chosen=i in chosen,
                )
            )
        current: dict[int, int] = {}
        for i in sorted(chosen):
            pair = pairs[i]
            current[pair.this_region.id] = previous[pair.last_region.id]
        for region in regions_from_labels(slices[z], z):
            if region.id not in current:
                current[region.id] = next_label
                new_labels.append((z, region.id, next_label))
                next_label += 1
        for label in current.values():
            last_seen[label] = z
        assignments.append(current)
        previous = current

    last_z = len(slices) - 1
    terminated = tuple(
        sorted(
            (z, label)
            for label, z in last_seen.items()
            if z < last_z
        )
    )
    result = TrackResult(
        assignments=tuple(assignments),
        new_labels=tuple(new_labels),
        terminated=terminated,
        similarity_log=tuple(log),
    )

    for z, grid in enumerate(slices):
        mapping = assignments[z]
        if mapping:
            lookup = np.zeros(int(grid.data.max()) + 1, dtype=np.uint32)
            for region_id, label in mapping.items():
                lookup[region_id] = label
            volume[z] = lookup[grid.data]
    return result, _freeze(volume)


def evaluate_tracking(
    result_volume: np.ndarray,
    gt_volume: np.ndarray,
    *,
    ignore_boundary: bool = True,
) -> MetricReport:
    """Score a tracked volume against ground truth at the voxel level.

    Global labels are treated as one flat partition over all voxels, so the
    report's VI/ARI/mAP reflect 3D track identity, not per-slice agreement.
    """
    result_volume = np.asarray(result_volume)
    gt_volume = np.asarray(gt_volume)
    if result_volume.shape != gt_volume.shape:
        raise ConsistencyError(
            f"volume shapes differ: {result_volume.shape} vs {gt_volume.shape}"
        )
    return compute_report(
        result_volume.reshape(-1),
        gt_volume.reshape(-1),
        ignore_boundary=ignore_boundary,
    )
