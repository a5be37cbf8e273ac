"""Raster and manifest serialization.

On-disk formats:

* label rasters      -> 16-bit grayscale PNG (region ids, 0 = boundary/none)
* boundary rasters   -> 8-bit PNG, boundary pixels dark (0) on light (255)
                        background; reading maps value < 128 to 1
* gray / flaw maps   -> 8-bit PNG, values stored as-is
* probability/weight -> ".gsr": magic "GSR1", three little-endian uint32
                        (width, height, channels), then float32 row-major
                        channel-interleaved samples
* stack manifests    -> JSON object with exactly the keys
                        {"kind", "pixel_size_xy", "z_spacing", "slices"}
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .model import (
    MANIFEST_KINDS,
    BoundaryGrid,
    ConsistencyError,
    FloatGrid,
    FormatError,
    GrayGrid,
    LabelGrid,
    ProbabilityGrid,
    ResolutionError,
    StackManifest,
    ValidationError,
)

GSR_MAGIC = b"GSR1"
_GSR_HEADER = struct.Struct("<4sIII")  # magic, width, height, channels

BOUNDARY_READ_THRESHOLD = 128  # PNG value < threshold counts as boundary

Grid = LabelGrid | BoundaryGrid | GrayGrid | ProbabilityGrid | FloatGrid


# --------------------------------------------------------------------------- gsr

def write_gsr(data: np.ndarray, path: str | Path) -> None:
    """Write a (h, w, c) float array as a .gsr raster (float32 payload)."""
    if data.ndim != 3:
        raise ValidationError(f"gsr payload must be 3-D, got shape {data.shape}")
    h, w, c = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_GSR_HEADER.pack(GSR_MAGIC, w, h, c))
        f.write(payload.tobytes())


def read_gsr(path: str | Path) -> np.ndarray:
    """Read a .gsr raster into a (h, w, c) float32 array."""
    path = Path(path)
    if not path.is_file():
        raise ResolutionError(f"raster not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _GSR_HEADER.size:
        raise FormatError(f"{path}: truncated gsr header ({len(raw)} bytes)")
    magic, w, h, c = _GSR_HEADER.unpack_from(raw)
    if magic != GSR_MAGIC:
        raise FormatError(f"{path}: bad gsr magic {magic!r}")
    if w < 1 or h < 1 or c < 1:
        raise FormatError(f"{path}: bad gsr dimensions {w}x{h}x{c}")
    want = _GSR_HEADER.size + 4 * w * h * c
    if len(raw) != want:
        raise FormatError(f"{path}: gsr payload is {len(raw)} bytes, expected {want}")
    flat = np.frombuffer(raw, dtype="<f4", offset=_GSR_HEADER.size)
    return flat.reshape(h, w, c).astype(np.float32)


def _peek_gsr_size(path: Path) -> tuple[int, int]:
    with open(path, "rb") as f:
        head = f.read(_GSR_HEADER.size)
    if len(head) < _GSR_HEADER.size:
        raise FormatError(f"{path}: truncated gsr header")
    magic, w, h, _ = _GSR_HEADER.unpack(head)
    if magic != GSR_MAGIC:
        raise FormatError(f"{path}: bad gsr magic {magic!r}")
    return w, h


# --------------------------------------------------------------------------- png

def _open_png(path: Path) -> Image.Image:
    if not path.is_file():
        raise ResolutionError(f"raster not found: {path}")
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:  # PIL raises a zoo of types for bad bytes
        raise FormatError(f"{path}: not a readable PNG ({exc})") from exc
    return img


def _read_png16(path: Path) -> np.ndarray:
    img = _open_png(path)
    if img.mode not in ("I;16", "I;16B", "I"):
        raise FormatError(f"{path}: expected 16-bit grayscale PNG, got mode {img.mode}")
    arr = np.asarray(img)
    if arr.dtype != np.uint16:
        if arr.min() < 0 or arr.max() > 0xFFFF:
            raise ValidationError(f"{path}: pixel values exceed 16-bit range")
        arr = arr.astype(np.uint16)
    return arr


def _read_png8(path: Path) -> np.ndarray:
    img = _open_png(path)
    if img.mode != "L":
        raise FormatError(f"{path}: expected 8-bit grayscale PNG, got mode {img.mode}")
    return np.asarray(img, dtype=np.uint8)


# --------------------------------------------------------------------------- rasters

def write_raster(grid: Grid, path: str | Path) -> None:
    """Write a grid in its canonical on-disk format (chosen by grid type)."""
    path = Path(path)
    if isinstance(grid, LabelGrid):
        data = grid.data
        if data.max(initial=0) > 0xFFFF:
            raise ValidationError(
                f"label raster has id {int(data.max())} > 65535; coarsen the "
                "labeling (e.g. run more growth sweeps) before writing PNG"
            )
        Image.fromarray(np.ascontiguousarray(data, dtype=np.uint16)).save(path)
    elif isinstance(grid, BoundaryGrid):
        out = np.where(grid.data == 1, 0, 255).astype(np.uint8)
        Image.fromarray(out, mode="L").save(path)
    elif isinstance(grid, GrayGrid):
        Image.fromarray(grid.data, mode="L").save(path)
    elif isinstance(grid, (ProbabilityGrid, FloatGrid)):
        write_gsr(grid.data, path)
    else:
        raise ValidationError(f"cannot serialize object of type {type(grid).__name__}")


def read_raster(path: str | Path, kind: str) -> Grid:
    """Read a raster of the given manifest kind; validates type invariants."""
    path = Path(path)
    if kind == "label":
        return LabelGrid(_read_png16(path))
    if kind == "boundary":
        raw = _read_png8(path)
        return BoundaryGrid((raw < BOUNDARY_READ_THRESHOLD).astype(np.uint8))
    if kind in ("gray", "flaw"):
        return GrayGrid(_read_png8(path))
    if kind == "probability":
        return ProbabilityGrid(read_gsr(path))
    if kind == "weight":
        return FloatGrid(read_gsr(path))
    raise ValidationError(f"unknown raster kind {kind!r}")


def peek_raster_size(path: str | Path) -> tuple[int, int]:
    """(width, height) of a raster without decoding the payload."""
    path = Path(path)
    if not path.is_file():
        raise ResolutionError(f"raster not found: {path}")
    if path.suffix == ".gsr":
        return _peek_gsr_size(path)
    try:
        with Image.open(path) as img:
            return img.size
    except Exception as exc:
        raise FormatError(f"{path}: not a readable image ({exc})") from exc


# --------------------------------------------------------------------------- manifests

def save_manifest(manifest: StackManifest, path: str | Path) -> None:
    doc = {
        "kind": manifest.kind,
        "pixel_size_xy": manifest.pixel_size_xy,
        "z_spacing": manifest.z_spacing,
        "slices": list(manifest.slices),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def resolve_slice(manifest_path: str | Path, slice_path: str) -> Path:
    """Resolve a manifest slice entry against the manifest's directory."""
    p = Path(slice_path)
    if p.is_absolute():
        return p
    return Path(manifest_path).parent / p


def load_manifest(path: str | Path, check_slices: bool = True) -> StackManifest:
    """Parse and validate a stack manifest.

    With check_slices (the default) every referenced raster must exist and all
    must share one width x height.
    """
    path = Path(path)
    if not path.is_file():
        raise ResolutionError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    keys = set(doc.keys())
    want = {"kind", "pixel_size_xy", "z_spacing", "slices"}
    if keys != want:
        raise FormatError(
            f"{path}: manifest keys must be exactly {sorted(want)}, got {sorted(keys)}"
        )
    if not isinstance(doc["slices"], list) or not all(
        isinstance(s, str) for s in doc["slices"]
    ):
        raise FormatError(f"{path}: 'slices' must be a list of strings")
    if not isinstance(doc["kind"], str):
        raise FormatError(f"{path}: 'kind' must be a string")
    for key in ("pixel_size_xy", "z_spacing"):
        if not isinstance(doc[key], (int, float)) or isinstance(doc[key], bool):
            raise FormatError(f"{path}: {key!r} must be a number")

    manifest = StackManifest(
        kind=doc["kind"],
        pixel_size_xy=float(doc["pixel_size_xy"]),
        z_spacing=float(doc["z_spacing"]),
        slices=tuple(doc["slices"]),
    )
    if check_slices:
        size: tuple[int, int] | None = None
        for i, entry in enumerate(manifest.slices):
            p = resolve_slice(path, entry)
            if not p.is_file():
                raise ResolutionError(f"{path}: slice {i} not found: {p}")
            s = peek_raster_size(p)
            if size is None:
                size = s
            elif s != size:
                raise ConsistencyError(
                    f"{path}: slice {i} is {s[0]}x{s[1]}, expected {size[0]}x{size[1]}"
                )
    return manifest


def load_stack(path: str | Path) -> tuple[StackManifest, list[Grid]]:
    """Load a manifest and decode every slice it references, in order."""
    path = Path(path)
    manifest = load_manifest(path, check_slices=True)
    grids = [read_raster(resolve_slice(path, s), manifest.kind) for s in manifest.slices]
    return manifest, grids


def write_stack(
    grids: list,
    directory: str | Path,
    kind: str,
    pixel_size_xy: float = 1.0,
    z_spacing: float = 1.0,
    manifest_name: str | None = None,
) -> Path:
    """Write slices as slice_NNNN rasters plus a manifest; returns manifest path."""
    if kind not in MANIFEST_KINDS:
        raise ValidationError(f"unknown stack kind {kind!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = ".gsr" if kind in ("probability", "weight") else ".png"
    names = []
    for i, grid in enumerate(grids):
        name = f"slice_{i:04d}{ext}"
        write_raster(grid, directory / name)
        names.append(name)
    manifest = StackManifest(
        kind=kind, pixel_size_xy=pixel_size_xy, z_spacing=z_spacing, slices=tuple(names)
    )
    mpath = directory / (manifest_name or f"{kind}.json")
    save_manifest(manifest, mpath)
    return mpath
