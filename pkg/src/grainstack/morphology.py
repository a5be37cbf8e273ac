"""Geometric substrate: connected components, label/boundary conversion, exact
Euclidean distance transform, dilation, and topology-preserving thinning.

Conventions: interior regions are 4-connected, boundary ink is 8-connected (the
complementary pair), both exposed as options. All functions are pure and
deterministic; region ids are assigned in raster order of first occurrence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .model import BoundaryGrid, LabelGrid, ParameterError, ValidationError


# --------------------------------------------------------------------------- types

@dataclass(frozen=True)
class DistanceField:
    """Per-pixel Euclidean distance to the nearest boundary pixel, in pixels."""

    data: np.ndarray  # (h, w) float64

    def __post_init__(self) -> None:
        if self.data.ndim != 2:
            raise ValidationError(f"DistanceField must be 2-D, got shape {self.data.shape}")
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def at(self, x: int, y: int) -> float:
        return float(self.data[y, x])


# --------------------------------------------------------------------------- components

def _first_occurrence_order(labels: np.ndarray, count: int) -> np.ndarray:
    """Mapping old-id -> new-id such that new ids increase in raster order of
    each region's first pixel. Id 0 maps to 0."""
    flat = labels.ravel()
    first = np.full(count + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(flat.size, dtype=np.int64))
    order = np.argsort(first[1:], kind="stable") + 1  # old ids sorted by first pixel
    mapping = np.zeros(count + 1, dtype=np.int64)
    mapping[order] = np.arange(1, count + 1)
    return mapping


def _compact_label_dtype(labels: np.ndarray) -> np.ndarray:
    if labels.max(initial=0) <= np.iinfo(np.uint16).max:
        return labels.astype(np.uint16)
    return labels.astype(np.uint32)


def _connectivity_structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    if connectivity == 8:
        return ndimage.generate_binary_structure(2, 2)
    raise ParameterError(f"connectivity must be 4 or 8, got {connectivity}")


def connected_components(boundary: BoundaryGrid, connectivity: int = 4) -> LabelGrid:
    """Label the interior (non-boundary) regions of a boundary mask.

    Boundary pixels keep id 0. Ids are dense 1..k in raster order of each
    region's first pixel, so the result is reproducible across library
    versions.
    """
    structure = _connectivity_structure(connectivity)
    interior = boundary.data == 0
    raw, count = ndimage.label(interior, structure=structure)
    if count == 0:
        return LabelGrid(np.zeros(boundary.data.shape, dtype=np.uint16))
    mapping = _first_occurrence_order(raw, count)
    return LabelGrid(_compact_label_dtype(mapping[raw]))


@njit(cache=True)
def _uf_find(parent: np.ndarray, i: np.int64) -> np.int64:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:  # path compression
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True)
def _volume_union_find(vol: np.ndarray, background: np.int64) -> np.ndarray:
    """6-connected same-value components of a (z, y, x) volume.

    Voxels equal to `background` stay 0; other components get dense ids in
    raster (z, y, x) order of their first voxel.
    """
    nz, ny, nx = vol.shape
    n = nz * ny * nx
    parent = np.arange(n, dtype=np.int64)
    idx = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                v = vol[z, y, x]
                if v == background:
                    idx += 1
                    continue
                if x > 0 and vol[z, y, x - 1] == v:
                    ra = _uf_find(parent, idx)
                    rb = _uf_find(parent, idx - 1)
                    if ra < rb:
                        parent[rb] = ra
                    else:
                        parent[ra] = rb
                if y > 0 and vol[z, y - 1, x] == v:
                    ra = _uf_find(parent, idx)
                    rb = _uf_find(parent, idx - nx)
                    if ra < rb:
                        parent[rb] = ra
                    else:
                        parent[ra] = rb
                if z > 0 and vol[z - 1, y, x] == v:
                    ra = _uf_find(parent, idx)
                    rb = _uf_find(parent, idx - ny * nx)
                    if ra < rb:
                        parent[rb] = ra
                    else:
                        parent[ra] = rb
                idx += 1
    out = np.zeros(n, dtype=np.uint32)
    flat = vol.ravel()
    next_id = np.uint32(0)
    for i in range(n):
        if flat[i] == background:
            continue
        r = _uf_find(parent, i)
        if out[r] == 0:
            next_id += np.uint32(1)
            out[r] = next_id
        if r != i:
            out[i] = out[r]
    # union-by-min keeps each root at its component's first voxel, so ids are
    # already in first-occurrence order; remap kept as a cheap safety net
    remap = np.zeros(np.int64(next_id) + 1, dtype=np.uint32)
    fresh = np.uint32(0)
    for i in range(n):
        v = out[i]
        if v != 0 and remap[v] == 0:
            fresh += np.uint32(1)
            remap[v] = fresh
        out[i] = remap[v] if v != 0 else np.uint32(0)
    return out.reshape(nz, ny, nx)


def volume_components(volume: np.ndarray, background: int = 0) -> np.ndarray:
    """6-connected same-value labeling of a 3D volume (uint32 output).

    This is the ground-truth grain identity for simulated spin volumes: voxels
    sharing a value and a face belong to one grain.
    """
    if volume.ndim != 3:
        raise ValidationError(f"volume must be 3-D, got shape {volume.shape}")
    vol = np.ascontiguousarray(volume, dtype=np.int64)
    return _volume_union_find(vol, np.int64(background))


def relabel_regions(labels: LabelGrid, connectivity: int = 4) -> LabelGrid:
    """Split duplicate-id disconnected regions: same-value connected components
    get dense first-occurrence ids; id 0 stays 0."""
    if connectivity != 4:
        raise ParameterError("relabel_regions supports 4-connectivity only")
    out = volume_components(labels.data[None, :, :].astype(np.int64), background=0)[0]
    return LabelGrid(_compact_label_dtype(out))


# --------------------------------------------------------------------------- boundaries

def labels_to_boundary(labels: LabelGrid, neighborhood: int = 8) -> BoundaryGrid:
    """Mark every pixel having a differently-labeled neighbor.

    Both sides of each interface are marked (2-pixel ribbon); thin with
    skeletonize to get single-pixel closed boundaries. Image borders are not
    boundaries.
    """
    if neighborhood == 4:
        offsets = ((0, 1), (1, 0))
    elif neighborhood == 8:
        offsets = ((0, 1), (1, 0), (1, 1), (1, -1))
    else:
        raise ParameterError(f"neighborhood must be 4 or 8, got {neighborhood}")
    data = labels.data
    h, w = data.shape
    out = np.zeros(data.shape, dtype=bool)
    for dy, dx in offsets:
        win_a = (slice(max(0, -dy), h - max(0, dy)), slice(max(0, -dx), w - max(0, dx)))
        win_b = (slice(max(0, dy), h - max(0, -dy)), slice(max(0, dx), w - max(0, -dx)))
        diff = data[win_a] != data[win_b]
        out[win_a] |= diff
        out[win_b] |= diff
    return BoundaryGrid(out.astype(np.uint8))


def distance_transform(boundary: BoundaryGrid) -> DistanceField:
    """Exact Euclidean distance to the nearest boundary pixel."""
    if boundary.count() == 0:
        raise ValidationError("distance transform needs at least one boundary pixel")
    d = ndimage.distance_transform_edt(boundary.data == 0)
    return DistanceField(np.asarray(d, dtype=np.float64))


def _disc_footprint(radius: float) -> np.ndarray:
    r = int(np.floor(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (xx * xx + yy * yy) <= radius * radius


def dilate(boundary: BoundaryGrid, radius: float) -> BoundaryGrid:
    """Euclidean dilation: output 1 exactly where distance to mask ≤ radius."""
    if radius < 0:
        raise ParameterError(f"dilate radius must be ≥ 0, got {radius}")
    if radius == 0:
        return boundary
    out = ndimage.binary_dilation(boundary.data == 1, structure=_disc_footprint(radius))
    return BoundaryGrid(out.astype(np.uint8))


# --------------------------------------------------------------------------- thinning

_N8 = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))  # (dx, dy)


def _build_simple_lut() -> tuple[np.ndarray, np.ndarray]:
    """256-entry table: pattern of 8 neighbors -> is the center deletable
    without changing topology (8-connected ink, 4-connected interior)."""

    def components(cells: list[tuple[int, int]], four_connected: bool) -> list[set]:
        remaining = set(cells)
        comps = []
        while remaining:
            seed = remaining.pop()
            comp = {seed}
            frontier = [seed]
            while frontier:
                cx, cy = frontier.pop()
                for ox, oy in list(remaining):
                    dx, dy = abs(cx - ox), abs(cy - oy)
                    near = (dx + dy == 1) if four_connected else (max(dx, dy) == 1 and dx + dy > 0)
                    if near:
                        remaining.discard((ox, oy))
                        comp.add((ox, oy))
                        frontier.append((ox, oy))
            comps.append(comp)
        return comps

    four_adjacent = {(0, -1), (-1, 0), (1, 0), (0, 1)}
    lut = np.zeros(256, dtype=np.uint8)
    popcount = np.zeros(256, dtype=np.uint8)
    for pattern in range(256):
        fg = [_N8[i] for i in range(8) if pattern >> i & 1]
        popcount[pattern] = len(fg)
        if not fg:
            continue  # isolated pixel: never deletable
        if len(components(fg, four_connected=False)) != 1:
            continue  # deletion would split the ink locally
        bg = [_N8[i] for i in range(8) if not pattern >> i & 1]
        touching = [
            c for c in components(bg, four_connected=True) if c & four_adjacent
        ]
        if len(touching) != 1:
            continue  # deletion would merge interiors or open a hole
        lut[pattern] = 1
    return lut, popcount


_SIMPLE_LUT, _POPCOUNT = _build_simple_lut()


@njit(cache=True, inline="always")
def _pattern_at(img: np.ndarray, y: np.int64, x: np.int64) -> np.int64:
    # out-of-bounds counts as foreground (wall): interiors never connect
    # through the image border, so deletions cannot merge two in-image
    # interior components across it
    h, w = img.shape
    pat = 0
    bit = 1
    for dy in range(-1, 2):
        for dx in range(-1, 2):
            if dx == 0 and dy == 0:
                continue
            yy = y + dy
            xx = x + dx
            if yy < 0 or yy >= h or xx < 0 or xx >= w or img[yy, xx] == 1:
                pat |= bit
            bit <<= 1
    return pat


@njit(cache=True)
def _thin_inplace(img: np.ndarray, lut: np.ndarray, popcount: np.ndarray) -> None:
    h, w = img.shape
    dirs = ((-1, 0), (1, 0), (0, -1), (0, 1))  # (dy, dx): N, S, W, E border passes
    marked = np.zeros((h, w), dtype=np.uint8)
    changed = True
    while changed:
        changed = False
        for d in range(4):
            dy, dx = dirs[d]
            # snapshot this direction's border pixels so one subpass peels at
            # most one layer (otherwise a whole slab erodes from one side)
            for y in range(h):
                for x in range(w):
                    if img[y, x] != 1:
                        marked[y, x] = 0
                        continue
                    yy = y + dy
                    xx = x + dx
                    inside = 0 <= yy < h and 0 <= xx < w
                    marked[y, x] = 0 if (inside and img[yy, xx] == 1) else 1
            for y in range(h):
                for x in range(w):
                    if marked[y, x] != 1:
                        continue
                    pat = _pattern_at(img, y, x)
                    if popcount[pat] > 1 and lut[pat] == 1:
                        img[y, x] = 0
                        changed = True
    # break residual 2x2 blocks (staircase corners the directional passes keep)
    progress = True
    while progress:
        progress = False
        for y in range(h - 1):
            for x in range(w - 1):
                if (
                    img[y, x] == 1
                    and img[y, x + 1] == 1
                    and img[y + 1, x] == 1
                    and img[y + 1, x + 1] == 1
                ):
                    for k in range(4):
                        yy = y + (k // 2)
                        xx = x + (k % 2)
                        pat = _pattern_at(img, yy, xx)
                        if popcount[pat] > 1 and lut[pat] == 1:
                            img[yy, xx] = 0
                            progress = True
                            break


def skeletonize(boundary: BoundaryGrid) -> BoundaryGrid:
    """Thin boundary ink to single-pixel width.

    Sequential simple-point deletion (deterministic N/S/W/E border passes in
    raster order) with endpoint protection, then a pass that deletes one
    deletable pixel from each remaining 2x2 block. Interior (4-connected
    background) component count and adjacency are preserved; the operation is
    idempotent on its own output.
    """
    img = boundary.data.copy()
    _thin_inplace(img, _SIMPLE_LUT, _POPCOUNT)
    return BoundaryGrid(img)


# --------------------------------------------------------------------------- misc

def interior_component_count(boundary: BoundaryGrid, connectivity: int = 4) -> int:
    """Number of 4-connected interior regions (id 0 pixels excluded)."""
    structure = _connectivity_structure(connectivity)
    _, count = ndimage.label(boundary.data == 0, structure=structure)
    return int(count)
