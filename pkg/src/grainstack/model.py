"""Core data model: typed rasters, regions, stack manifests, and the error taxonomy.

Every other module builds on the types here. Grids are thin immutable wrappers
around numpy arrays that enforce their invariants at construction time; the
arrays themselves are frozen (writeable=False) so a grid can be shared freely.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


# --------------------------------------------------------------------------- errors

class GrainstackError(Exception):
    """Base class for all library errors."""


class FormatError(GrainstackError):
    """A file's bytes do not parse as the format they claim to be."""


class ValidationError(GrainstackError):
    """Well-formed data violates a documented invariant."""


class ConsistencyError(GrainstackError):
    """Two valid artifacts disagree (shape mismatch, wrong tile count, ...)."""


class ResolutionError(GrainstackError):
    """A referenced path does not exist or cannot be resolved."""


class ParameterError(GrainstackError):
    """A configuration value is outside its legal range."""


class BackendError(GrainstackError):
    """An external similarity scorer failed (bad exit, bad output, timeout)."""


# --------------------------------------------------------------------------- grids

def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr and arr.flags.writeable:
        out = arr.copy()
    out.flags.writeable = False
    return out


def _require_2d(data: np.ndarray, what: str) -> None:
    if data.ndim != 2:
        raise ValidationError(f"{what} must be 2-D, got shape {data.shape}")
    if data.shape[0] < 1 or data.shape[1] < 1:
        raise ValidationError(f"{what} must be non-empty, got shape {data.shape}")


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """Per-pixel region ids. Id 0 is reserved for boundary/unassigned pixels.

    Duplicate ids for disconnected regions are legal (e.g. spin sections of a
    simulated volume); consumers that need one id per connected region relabel
    via morphology.connected_components.
    """

    data: np.ndarray  # (h, w) uint16 or uint32, row-major

    def __post_init__(self) -> None:
        _require_2d(self.data, "LabelGrid")
        if self.data.dtype not in (np.uint16, np.uint32):
            raise ValidationError(
                f"LabelGrid dtype must be uint16 or uint32, got {self.data.dtype}"
            )
        object.__setattr__(self, "data", _freeze(self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def ids(self) -> np.ndarray:
        """Sorted distinct nonzero ids present in the grid."""
        u = np.unique(self.data)
        return u[u != 0]

    def at(self, x: int, y: int) -> int:
        """Value at column x, row y (row-major storage)."""
        return int(self.data[y, x])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelGrid):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __hash__(self) -> int:
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True, eq=False)
class BoundaryGrid:
    """Binary boundary mask: 1 on boundary pixels, 0 elsewhere."""

    data: np.ndarray  # (h, w) uint8, values in {0, 1}

    def __post_init__(self) -> None:
        _require_2d(self.data, "BoundaryGrid")
        if self.data.dtype != np.uint8:
            raise ValidationError(f"BoundaryGrid dtype must be uint8, got {self.data.dtype}")
        bad = (self.data > 1)
        if bad.any():
            raise ValidationError(
                f"BoundaryGrid values must be 0 or 1; found {int(self.data[bad][0])}"
            )
        object.__setattr__(self, "data", _freeze(self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def at(self, x: int, y: int) -> int:
        return int(self.data[y, x])

    def count(self) -> int:
        """Number of boundary pixels."""
        return int(self.data.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BoundaryGrid):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __hash__(self) -> int:
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True, eq=False)
class GrayGrid:
    """8-bit grayscale image (rendered or captured micrograph)."""

    data: np.ndarray  # (h, w) uint8

    def __post_init__(self) -> None:
        _require_2d(self.data, "GrayGrid")
        if self.data.dtype != np.uint8:
            raise ValidationError(f"GrayGrid dtype must be uint8, got {self.data.dtype}")
        object.__setattr__(self, "data", _freeze(self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def at(self, x: int, y: int) -> int:
        return int(self.data[y, x])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GrayGrid):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __hash__(self) -> int:
        return hash((self.data.shape, self.data.tobytes()))


PROBABILITY_SUM_TOL = 1e-6  # per-pixel |sum_k p_k - 1| allowed at construction/IO


@dataclass(frozen=True, eq=False)
class ProbabilityGrid:
    """Per-pixel class probabilities, channel-last.

    Channel 0 is the interior (non-boundary) class, channel 1 the boundary
    class. Each pixel's channel values must sum to 1 within PROBABILITY_SUM_TOL.
    """

    data: np.ndarray  # (h, w, k) float32, k >= 2

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ValidationError(f"ProbabilityGrid must be 3-D, got shape {self.data.shape}")
        if self.data.shape[2] < 2:
            raise ValidationError("ProbabilityGrid needs at least 2 channels")
        if self.data.dtype != np.float32:
            raise ValidationError(
                f"ProbabilityGrid dtype must be float32, got {self.data.dtype}"
            )
        if np.isnan(self.data).any():
            raise ValidationError("ProbabilityGrid contains NaN")
        if (self.data < 0).any() or (self.data > 1).any():
            raise ValidationError("ProbabilityGrid values must lie in [0, 1]")
        sums = self.data.astype(np.float64).sum(axis=2)
        err = np.abs(sums - 1.0).max()
        if err > PROBABILITY_SUM_TOL:
            raise ValidationError(
                f"ProbabilityGrid channels must sum to 1 (max deviation {err:.3g})"
            )
        object.__setattr__(self, "data", _freeze(self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def at(self, x: int, y: int) -> np.ndarray:
        return self.data[y, x]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProbabilityGrid):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __hash__(self) -> int:
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True, eq=False)
class FloatGrid:
    """Generic float raster, channel-last; carrier for weight fields etc."""

    data: np.ndarray  # (h, w, c) float32

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ValidationError(f"FloatGrid must be 3-D, got shape {self.data.shape}")
        if self.data.dtype != np.float32:
            raise ValidationError(f"FloatGrid dtype must be float32, got {self.data.dtype}")
        object.__setattr__(self, "data", _freeze(self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def at(self, x: int, y: int) -> np.ndarray:
        return self.data[y, x]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FloatGrid):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __hash__(self) -> int:
        return hash((self.data.shape, self.data.tobytes()))


# --------------------------------------------------------------------------- regions

@dataclass(frozen=True)
class GrainRegion:
    """One connected region within a single slice.

    The source grid reference is the region's pixel-set handle: the pixels are
    exactly {(x, y) in bbox : grid.data[y, x] == id}.
    """

    id: int                      # nonzero region id within the slice
    slice_index: int             # z position of the slice the region lives in
    area: int                    # pixel count, > 0
    centroid: tuple[float, float]    # (x, y) mean pixel position
    bbox: tuple[int, int, int, int]  # (min_x, min_y, max_x, max_y), inclusive
    grid: LabelGrid | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.id <= 0:
            raise ValidationError(f"GrainRegion id must be positive, got {self.id}")
        if self.area <= 0:
            raise ValidationError(f"GrainRegion area must be positive, got {self.area}")
        x0, y0, x1, y1 = self.bbox
        if x1 < x0 or y1 < y0:
            raise ValidationError(f"GrainRegion bbox is empty: {self.bbox}")
        if self.area > (x1 - x0 + 1) * (y1 - y0 + 1):
            raise ValidationError("GrainRegion area exceeds its bbox capacity")
        cx, cy = self.centroid
        if not (x0 <= cx <= x1 and y0 <= cy <= y1):
            raise ValidationError("GrainRegion centroid lies outside its bbox")

    def pixel_mask(self) -> np.ndarray:
        """Boolean mask of the region, cropped to its bbox."""
        if self.grid is None:
            raise ValidationError("GrainRegion has no source grid attached")
        x0, y0, x1, y1 = self.bbox
        return self.grid.data[y0 : y1 + 1, x0 : x1 + 1] == self.id


# --------------------------------------------------------------------------- manifests

AXIS_ORDER = "zyx"  # slices indexed by z, rasters stored row-major (y, x)

MANIFEST_KINDS = ("label", "boundary", "gray", "probability", "weight", "flaw")

_MANIFEST_KEYS = {"kind", "pixel_size_xy", "z_spacing", "slices"}


@dataclass(frozen=True)
class StackManifest:
    """Ordered list of same-kind slice rasters with physical spacing metadata.

    Slice paths are stored verbatim; relative paths resolve against the
    directory containing the manifest file.
    """

    kind: str                      # one of MANIFEST_KINDS
    pixel_size_xy: float           # in-plane pixel size, micrometers
    z_spacing: float               # slice-to-slice spacing, micrometers
    slices: tuple[str, ...]        # ordered raster paths, bottom to top

    def __post_init__(self) -> None:
        if self.kind not in MANIFEST_KINDS:
            raise ValidationError(
                f"manifest kind must be one of {MANIFEST_KINDS}, got {self.kind!r}"
            )
        if not (self.pixel_size_xy > 0 and np.isfinite(self.pixel_size_xy)):
            raise ValidationError(f"pixel_size_xy must be positive, got {self.pixel_size_xy}")
        if not (self.z_spacing > 0 and np.isfinite(self.z_spacing)):
            raise ValidationError(f"z_spacing must be positive, got {self.z_spacing}")
        if len(self.slices) == 0:
            raise ValidationError("manifest must reference at least one slice")
        object.__setattr__(self, "slices", tuple(str(p) for p in self.slices))

    @property
    def depth(self) -> int:
        return len(self.slices)

    def __iter__(self) -> Iterator[str]:
        return iter(self.slices)
