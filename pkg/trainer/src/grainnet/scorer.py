"""Batch-protocol similarity scoring for the external tracker hook.

The tracker hands over a directory containing ``pairs.json`` (rows with
``row``/``this_id``/``last_id``) and ``pairs.gsr`` (all crops stacked
vertically: shape ``(n * crop, crop, 2)``).  The scorer must leave a
``scores.json`` with one ``{"row", "similarity"}`` entry per input row
and exit zero; any malformed input must produce a nonzero exit instead.
Similarity is the trained classifier's probability that both crops show
the same grain.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import torch

from .errors import GrainnetError, ProtocolError
from .formats import read_gsr
from .model import PairClassifier
from .train import load_checkpoint

_ROW_KEYS = {"row", "this_id", "last_id"}


def _load_rows(batch_dir: Path) -> list[dict]:
    listing = batch_dir / "pairs.json"
    if not listing.is_file():
        raise ProtocolError(f"{batch_dir}: missing pairs.json")
    try:
        rows = json.loads(listing.read_text())
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"{listing}: not valid JSON: {exc}") from exc
    if not isinstance(rows, list):
        raise ProtocolError(f"{listing}: expected a list of pair rows")
    for row in rows:
        if not isinstance(row, dict) or not _ROW_KEYS.issubset(row):
            raise ProtocolError(f"{listing}: rows need keys {sorted(_ROW_KEYS)}")
    return rows


def _load_crops(batch_dir: Path, count: int) -> torch.Tensor:
    raster = read_gsr(batch_dir / "pairs.gsr")
    height, crop, channels = raster.shape
    if channels != 2:
        raise ProtocolError(f"pairs.gsr carries {channels} channels, expected 2")
    if count == 0 or height != count * crop:
        raise ProtocolError(
            f"pairs.gsr height {height} does not split into {count} crops of {crop}"
        )
    stacked = raster.reshape(count, crop, crop, 2).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(stacked))


def score_batch(batch_dir: str | Path, checkpoint: str | Path) -> list[dict]:
    """Score one batch directory and write its scores.json."""
    batch_dir = Path(batch_dir)
    if not batch_dir.is_dir():
        raise ProtocolError(f"batch directory not found: {batch_dir}")
    rows = _load_rows(batch_dir)
    if not rows:
        scores: list[dict] = []
    else:
        model = load_checkpoint(checkpoint)
        if not isinstance(model, PairClassifier):
            raise ProtocolError(f"{checkpoint}: not a pair-classifier checkpoint")
        crops = _load_crops(batch_dir, len(rows))
        with torch.no_grad():
            same_probability = model.forward(crops)[:, 1]
        scores = [
            {"row": int(row["row"]), "similarity": float(p)}
            for row, p in zip(rows, same_probability)
        ]
    (batch_dir / "scores.json").write_text(json.dumps(scores, indent=2) + "\n")
    return scores


def run_scorer(argv: list[str], checkpoint: str | Path) -> int:
    """Executable entry point: maps protocol failures to a nonzero exit."""
    if len(argv) != 1:
        print("usage: scorer BATCH_DIR", file=sys.stderr)
        return 2
    try:
        score_batch(argv[0], checkpoint)
    except GrainnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
