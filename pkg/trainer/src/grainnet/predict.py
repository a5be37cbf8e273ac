"""Tile-directory inference producing stitchable probability rasters.

Input is a tile directory as written by the toolkit's tile splitter
(gray tiles, a plan file, and a ``tiles.json`` listing), plus an
optional second tile directory holding the previous slice's boundary
mask cut with the same plan.  Output mirrors the same layout with one
2-channel ``.gsr`` probability raster per tile, so the stitching tool
can reassemble the full slice directly.
"""

from __future__ import annotations

import shutil
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .formats import read_boundary, read_gray, read_tile_listing, write_gsr, write_tile_listing
from .model import PropagationUNet
from .train import load_checkpoint


def predict_tiles(
    tiles_dir: str | Path,
    checkpoint: str | Path,
    out_dir: str | Path,
    *,
    mask_tiles_dir: str | Path | None = None,
    batch_size: int = 8,
) -> list[Path]:
    """Run the model over every tile; returns the written raster paths."""
    tiles_dir = Path(tiles_dir)
    out_dir = Path(out_dir)
    listing = read_tile_listing(tiles_dir)
    if listing.kind != "gray":
        raise DataError(f"{tiles_dir}: expected gray tiles, got kind {listing.kind!r}")
    grays = [read_gray(p) for p in listing.tile_paths]

    if mask_tiles_dir is None:
        masks = [np.zeros_like(g) for g in grays]
    else:
        mask_listing = read_tile_listing(mask_tiles_dir)
        if mask_listing.kind != "boundary":
            raise DataError(
                f"{mask_tiles_dir}: expected boundary tiles, got kind "
                f"{mask_listing.kind!r}"
            )
        if len(mask_listing.tile_paths) != len(grays):
            raise DataError(
                f"mask tiles ({len(mask_listing.tile_paths)}) do not match gray "
                f"tiles ({len(grays)})"
            )
        masks = [read_boundary(p).astype(np.float32) for p in mask_listing.tile_paths]

    for gray, mask in zip(grays, masks):
        if gray.shape != mask.shape:
            raise DataError(f"tile shapes disagree: {gray.shape} vs {mask.shape}")

    model = load_checkpoint(checkpoint)
    if not isinstance(model, PropagationUNet):
        raise DataError(f"{checkpoint}: not a segmentation checkpoint")

    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    names: list[str] = []
    with torch.no_grad():
        for start in range(0, len(grays), batch_size):
            chunk = slice(start, start + batch_size)
            stacked = np.stack(
                [np.stack([g, m]) for g, m in zip(grays[chunk], masks[chunk])]
            )
            probabilities = model.forward(torch.from_numpy(stacked)).numpy()
            for offset, probs in enumerate(probabilities):
                name = f"tile_{start + offset:04d}.gsr"
                write_gsr(probs.transpose(1, 2, 0), out_dir / name)
                written.append(out_dir / name)
                names.append(name)

    shutil.copyfile(listing.plan_path, out_dir / "plan.json")
    write_tile_listing(out_dir, "probability", names)
    return written


def binarize_probability(raster: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Boundary mask from a (h, w, 2) probability raster: class 1 wins."""
    if raster.ndim != 3 or raster.shape[2] != 2:
        raise DataError(f"probability rasters carry 2 channels, got {raster.shape}")
    return (raster[:, :, 1] >= threshold).astype(np.uint8)
