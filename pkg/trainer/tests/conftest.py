"""Shared fixtures: a simulated dataset, weights, and pre-trained toys.

Integration fixtures drive the sibling toolkit strictly through its
command line, the same file interface production uses.  The suite skips
those tests when the toolkit executable is not installed.
"""

from __future__ import annotations

import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from grainnet.formats import read_labels, read_manifest
from grainnet.train import TrainConfig, train_pair_classifier, train_segmentation

TOOLKIT = "grainstack"


def simulate_args(slices: int) -> list[str]:
    """Flaw-injected toy volume recipe shared by fixtures and tests."""
    return [
        "--size", "64", "--slices", str(slices), "--q", "40",
        "--steps", "120", "--seed", "11",
        "--flaws", "--blur-segments", "6", "--blur-length", "12",
        "--blur-persistence", "2", "--noise-density", "0.05",
        "--scratch-count", "2", "--flaw-seed", "5",
    ]


def toolkit(*args: str) -> subprocess.CompletedProcess:
    """Run the sibling toolkit CLI, failing the test on nonzero exit."""
    result = subprocess.run(
        [TOOLKIT, *map(str, args)], capture_output=True, text=True
    )
    if result.returncode != 0:
        pytest.fail(
            f"{TOOLKIT} {' '.join(map(str, args))} exited "
            f"{result.returncode}:\n{result.stderr}"
        )
    return result


@pytest.fixture(scope="session")
def sim_dataset(tmp_path_factory) -> dict:
    """Flaw-injected 64x64x8 dataset plus weight fields, built via CLI."""
    if shutil.which(TOOLKIT) is None:
        pytest.skip(f"{TOOLKIT} CLI not installed; integration fixtures unavailable")
    root = tmp_path_factory.mktemp("dataset")
    dataset = root / "sim"
    weights = root / "weights"
    toolkit("simulate", *simulate_args(8), "--out", dataset)
    toolkit("weights", dataset / "boundaries.json", "--out", weights)
    return {"dataset": dataset, "weights": weights}


@pytest.fixture(scope="session")
def label_volume(sim_dataset) -> np.ndarray:
    stack = read_manifest(sim_dataset["dataset"] / "manifest.json")
    return np.stack([read_labels(p) for p in stack.paths])


@pytest.fixture(scope="session")
def trained_model(sim_dataset, tmp_path_factory) -> Path:
    """A briefly trained segmentation checkpoint for inference tests."""
    out = tmp_path_factory.mktemp("segrun")
    config = TrainConfig(base_width=16, steps=60, eval_every=30, seed=0)
    checkpoint, _ = train_segmentation(
        sim_dataset["dataset"], sim_dataset["weights"], out, config
    )
    return checkpoint


@pytest.fixture(scope="session")
def trained_scorer(label_volume, tmp_path_factory) -> Path:
    """A pair classifier fitted on the simulated label stack."""
    out = tmp_path_factory.mktemp("pairrun")
    checkpoint, trace = train_pair_classifier(
        label_volume, out, crop=16, steps=150, seed=3
    )
    assert trace["train_accuracy"] > 0.9, "scorer fixture failed to fit"
    return checkpoint


def pipeline_vi(checkpoint: Path, dataset_dir: Path, work: Path, z: int) -> float:
    """Variation of information for slice ``z`` through the full pipeline.

    Predicts the slice tile-by-tile (teacher-forced with the previous
    slice's true boundary), then stitches, skeletonizes, and scores with
    the toolkit CLI — the same route production predictions take.
    """
    import json

    from grainnet.formats import read_gsr, read_manifest, write_boundary, write_manifest
    from grainnet.predict import binarize_probability, predict_tiles

    gray = read_manifest(dataset_dir / "gray.json").paths
    boundaries = read_manifest(dataset_dir / "boundaries.json").paths
    work.mkdir(parents=True, exist_ok=True)
    toolkit("tiles", "split", gray[z], "--kind", "gray",
            "--tile", "48", "--overlap", "8", "--out", work / "tg")
    toolkit("tiles", "split", boundaries[z - 1], "--kind", "boundary",
            "--tile", "48", "--overlap", "8", "--out", work / "tm")
    predict_tiles(work / "tg", checkpoint, work / "tp", mask_tiles_dir=work / "tm")
    toolkit("tiles", "stitch", work / "tp", "--out", work / "st")
    mask = binarize_probability(read_gsr(work / "st" / "stitched.gsr"))
    for name in ("pred", "gt"):
        (work / name).mkdir(exist_ok=True)
    write_boundary(mask, work / "pred" / "slice.png")
    write_manifest(work / "pred" / "boundary.json", "boundary", ["slice.png"])
    shutil.copyfile(boundaries[z], work / "gt" / "slice.png")
    write_manifest(work / "gt" / "boundary.json", "boundary", ["slice.png"])
    toolkit("skeletonize", work / "pred" / "boundary.json", "--out", work / "skel")
    toolkit("eval", work / "skel" / "boundary.json", work / "gt" / "boundary.json",
            "--out", work / "rep")
    return float(json.loads((work / "rep" / "report.json").read_text())["vi"])
