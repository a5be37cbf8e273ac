"""Readers and writers for the interchange formats this package consumes.

The training stack talks to the rest of the toolchain exclusively through
files: `.gsr` float rasters, PNG slices, JSON stack manifests, weight-field
sidecars, and tile-directory listings.  The layouts are implemented here from
their documented byte structure so the package stands alone at runtime.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

GSR_MAGIC = b"GSR1"
_HEADER = struct.Struct("<III")  # width, height, channels

MANIFEST_KEYS = {"kind", "pixel_size_xy", "z_spacing", "slices"}


# --------------------------------------------------------------------------- gsr


def read_gsr(path: str | Path) -> np.ndarray:
    """Read a float32 raster; returns (height, width, channels)."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    if blob[:4] != GSR_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    width, height, channels = _HEADER.unpack_from(blob, 4)
    if min(width, height, channels) == 0:
        raise FormatError(f"{path}: zero dimension in header")
    expected = width * height * channels * 4
    payload = blob[4 + _HEADER.size :]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width, channels)
    return data.astype(np.float32)


def write_gsr(data: np.ndarray, path: str | Path) -> None:
    """Write a (height, width, channels) float array as a .gsr raster."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 3:
        raise FormatError(f"gsr rasters are 3-D, got shape {arr.shape}")
    height, width, channels = arr.shape
    with open(path, "wb") as f:
        f.write(GSR_MAGIC)
        f.write(_HEADER.pack(width, height, channels))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


# --------------------------------------------------------------------------- png


def read_gray(path: str | Path) -> np.ndarray:
    """Grayscale slice as float32 in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float32)
    return arr / 255.0


def read_boundary(path: str | Path) -> np.ndarray:
    """Boundary PNG (ink drawn dark) as a {0, 1} uint8 mask, 1 = boundary."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr < 128).astype(np.uint8)


def write_boundary(mask: np.ndarray, path: str | Path) -> None:
    """Inverse of read_boundary: 1 -> black ink, 0 -> white."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or not np.isin(mask, (0, 1)).all():
        raise FormatError("boundary masks are 2-D with values in {0, 1}")
    img = np.where(mask.astype(bool), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)


def read_labels(path: str | Path) -> np.ndarray:
    """Label slice PNG as an integer id raster."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise FormatError(f"{path}: label slices are single-channel")
    return arr.astype(np.int64)


# --------------------------------------------------------------------------- manifests


@dataclass(frozen=True)
class Stack:
    """A loaded slice stack plus the manifest geometry that described it."""

    kind: str
    pixel_size_xy: float
    z_spacing: float
    paths: tuple[Path, ...]


def read_manifest(path: str | Path) -> Stack:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != MANIFEST_KEYS:
        raise FormatError(f"{path}: manifest must hold exactly {sorted(MANIFEST_KEYS)}")
    slices = tuple(path.parent / s for s in doc["slices"])
    if not slices:
        raise FormatError(f"{path}: manifest lists no slices")
    return Stack(
        kind=str(doc["kind"]),
        pixel_size_xy=float(doc["pixel_size_xy"]),
        z_spacing=float(doc["z_spacing"]),
        paths=slices,
    )


def write_manifest(
    path: str | Path,
    kind: str,
    slice_names: list[str],
    *,
    pixel_size_xy: float = 1.0,
    z_spacing: float = 1.0,
) -> None:
    doc = {
        "kind": kind,
        "pixel_size_xy": pixel_size_xy,
        "z_spacing": z_spacing,
        "slices": list(slice_names),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# --------------------------------------------------------------------------- weight fields


@dataclass(frozen=True)
class WeightPlanes:
    """One slice's loss weights: background, object, and the dilated band."""

    w_bck: np.ndarray  # (h, w) float32
    w_obj: np.ndarray  # (h, w) float32
    m_d: np.ndarray    # (h, w) float32 in {0, 1}
    meta: dict


def load_weight_planes(path: str | Path) -> WeightPlanes:
    """Load a weight-field raster (.gsr) with its JSON sidecar."""
    path = Path(path)
    raw = read_gsr(path)
    if raw.shape[2] != 3:
        raise FormatError(f"{path}: weight rasters carry 3 channels, got {raw.shape[2]}")
    sidecar = path.with_suffix(".json")
    try:
        meta = json.loads(sidecar.read_text())
    except OSError as exc:
        raise FormatError(f"{path}: missing weight sidecar {sidecar.name}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sidecar}: invalid JSON: {exc}") from exc
    return WeightPlanes(
        w_bck=raw[:, :, 0], w_obj=raw[:, :, 1], m_d=raw[:, :, 2], meta=meta
    )


# --------------------------------------------------------------------------- tile directories


@dataclass(frozen=True)
class TileSet:
    kind: str
    plan_path: Path
    tile_paths: tuple[Path, ...]


def read_tile_listing(directory: str | Path) -> TileSet:
    directory = Path(directory)
    listing_path = directory / "tiles.json"
    try:
        listing = json.loads(listing_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{directory}: unreadable tiles.json: {exc}") from exc
    try:
        names = listing["tiles"]
        kind = listing["kind"]
        plan = listing.get("plan", "plan.json")
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{listing_path}: missing required key: {exc}") from exc
    return TileSet(
        kind=str(kind),
        plan_path=directory / plan,
        tile_paths=tuple(directory / n for n in names),
    )


def write_tile_listing(
    directory: str | Path, kind: str, tile_names: list[str], plan_name: str = "plan.json"
) -> None:
    doc = {"kind": kind, "plan": plan_name, "tiles": list(tile_names)}
    (Path(directory) / "tiles.json").write_text(json.dumps(doc, indent=2) + "\n")
