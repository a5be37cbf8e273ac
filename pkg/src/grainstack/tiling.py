"""Overlap-tile splitting and seam-free stitching.

Large slices are cut into fixed-size tiles whose margins overlap; every tile
contributes only its central core when stitched back, so per-tile edge
artifacts (from a network's receptive field, or any processing confined to
the margins) never reach the output.  Tiles at the source border read
mirror-continued pixels, and the split/stitch round trip is bit-exact for
every raster kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ConsistencyError, ParameterError

__all__ = ["Tile", "TilePlan", "plan_tiles", "split", "stitch"]


@dataclass(frozen=True)
class Tile:
    """One window of a tile plan.

    ``origin`` is the window's top-left corner in source coordinates (may be
    negative — the window then reads mirrored pixels).  ``core`` is the
    half-open source rectangle (x0, y0, x1, y1) this tile alone contributes
    to the stitched result.
    """

    origin_x: int
    origin_y: int
    core: tuple[int, int, int, int]


@dataclass(frozen=True)
class TilePlan:
    """Deterministic tiling of a source extent into overlapping windows.

    Cores partition the source exactly; each window is core plus ``overlap``
    margin on every side, ``tile_size`` square.
    """

    source_size: tuple[int, int]     # (width, height)
    tile_size: int
    overlap: int
    tiles: tuple[Tile, ...]

    @property
    def core_size(self) -> int:
        return self.tile_size - 2 * self.overlap

    def to_json(self) -> str:
        payload = {
            "source_size": list(self.source_size),
            "tile_size": self.tile_size,
            "overlap": self.overlap,
            "tiles": [
                {"origin": [t.origin_x, t.origin_y], "core": list(t.core)}
                for t in self.tiles
            ],
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TilePlan":
        try:
            payload = json.loads(text)
            plan = cls(
                source_size=tuple(payload["source_size"]),
                tile_size=int(payload["tile_size"]),
                overlap=int(payload["overlap"]),
                tiles=tuple(
                    Tile(
                        origin_x=int(t["origin"][0]),
                        origin_y=int(t["origin"][1]),
                        core=tuple(int(v) for v in t["core"]),
                    )
                    for t in payload["tiles"]
                ),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConsistencyError(f"malformed tile plan: {exc}") from exc
        return plan

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "TilePlan":
        return cls.from_json(Path(path).read_text())


def plan_tiles(
    source_size: tuple[int, int], tile_size: int, overlap: int
) -> TilePlan:
    """Lay out ceil(extent / core) windows per axis over the source.

    Cores advance in strides of ``tile_size - 2 * overlap``; the final
    row/column of cores is clipped to the source edge, so cores are disjoint
    and cover the extent exactly.
    """
    width, height = int(source_size[0]), int(source_size[1])
    if overlap < 0:
        raise ParameterError(f"overlap must be non-negative, got {overlap}")
    core = tile_size - 2 * overlap
    if core <= 0:
        raise ParameterError(
            f"tile_size must exceed twice the overlap: {tile_size} <= 2*{overlap}"
        )
    if width < core or height < core:
        raise ParameterError(
            f"source {width}x{height} is smaller than the tile core {core}"
        )
    nx = -(-width // core)
    ny = -(-height // core)
    tiles = []
    for iy in range(ny):
        for ix in range(nx):
            x0, y0 = ix * core, iy * core
            x1, y1 = min(x0 + core, width), min(y0 + core, height)
            tiles.append(
                Tile(origin_x=x0 - overlap, origin_y=y0 - overlap, core=(x0, y0, x1, y1))
            )
    return TilePlan(
        source_size=(width, height),
        tile_size=tile_size,
        overlap=overlap,
        tiles=tuple(tiles),
    )


def _mirror_indices(start: int, count: int, extent: int) -> np.ndarray:
    """Source indices for positions start..start+count-1 under mirror reads.

    Out-of-range positions continue the image as a triangular wave without
    repeating the edge sample (the overlap-tile border convention); a
    single-pixel axis maps everywhere to that pixel.
    """
    positions = np.arange(start, start + count, dtype=np.int64)
    m = extent - 1
    if m == 0:
        return np.zeros(count, dtype=np.int64)
    phase = np.abs(positions) % (2 * m)
    return np.where(phase <= m, phase, 2 * m - phase)


def _padded_window(data: np.ndarray, plan: TilePlan, tile: Tile) -> np.ndarray:
    rows = _mirror_indices(tile.origin_y, plan.tile_size, data.shape[0])
    cols = _mirror_indices(tile.origin_x, plan.tile_size, data.shape[1])
    return np.ascontiguousarray(data[np.ix_(rows, cols)])


def split(grid, plan: TilePlan) -> list:
    """Cut a grid into the plan's windows, preserving the raster kind."""
    data = grid.data
    if (data.shape[1], data.shape[0]) != plan.source_size:
        raise ConsistencyError(
            f"grid is {data.shape[1]}x{data.shape[0]} but the plan covers "
            f"{plan.source_size[0]}x{plan.source_size[1]}"
        )
    return [type(grid)(_padded_window(data, plan, tile)) for tile in plan.tiles]


def stitch(tiles: Sequence, plan: TilePlan):
    """Reassemble a grid from tiles, keeping only each tile's core pixels."""
    if len(tiles) != len(plan.tiles):
        raise ConsistencyError(
            f"plan expects {len(plan.tiles)} tiles, got {len(tiles)}"
        )
    width, height = plan.source_size
    first = tiles[0].data
    shape = (height, width) + first.shape[2:]
    out = np.zeros(shape, dtype=first.dtype)
    for grid, tile in zip(tiles, plan.tiles):
        data = grid.data
        if data.shape[:2] != (plan.tile_size, plan.tile_size):
            raise ConsistencyError(
                f"tile raster is {data.shape[1]}x{data.shape[0]}, "
                f"expected {plan.tile_size}x{plan.tile_size}"
            )
        if data.shape[2:] != first.shape[2:] or data.dtype != first.dtype:
            raise ConsistencyError("tiles disagree in channels or dtype")
        x0, y0, x1, y1 = tile.core
        oy, ox = y0 - tile.origin_y, x0 - tile.origin_x
        out[y0:y1, x0:x1] = data[oy : oy + (y1 - y0), ox : ox + (x1 - x0)]
    return type(tiles[0])(out)
