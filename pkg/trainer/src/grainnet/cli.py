"""Command-line entry points for training, inference, and pair scoring."""

from __future__ import annotations

import functools
import stat
import sys
from pathlib import Path

import click
import numpy as np

from .errors import GrainnetError
from .formats import read_gsr, read_labels, read_manifest, write_boundary
from .predict import binarize_probability, predict_tiles
from .scorer import run_scorer
from .train import TrainConfig, train_pair_classifier, train_segmentation


def _guarded(command):
    """Map package errors to exit code 3 with a one-line message."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except GrainnetError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)

    return wrapper


@click.group()
def main() -> None:
    """Neural training companion for the grain-boundary toolkit."""


@main.command()
@click.argument("dataset_dir", type=click.Path(path_type=Path))
@click.argument("weights_dir", type=click.Path(path_type=Path))
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--fusion", type=click.Choice(["layer1", "layer1_4"]), default="layer1",
              show_default=True)
@click.option("--width", type=int, default=64, show_default=True,
              help="Feature count at the first encoder level.")
@click.option("--tile", type=int, default=64, show_default=True)
@click.option("--batch", "batch_size", type=int, default=4, show_default=True)
@click.option("--steps", type=int, default=200, show_default=True)
@click.option("--lr", "learning_rate", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--pool-size", type=int, default=None,
              help="Cap on distinct training crops (default: steps * batch).")
@click.option("--eval-every", type=int, default=50, show_default=True)
@_guarded
def train(dataset_dir, weights_dir, out_dir, fusion, width, tile, batch_size,
          steps, learning_rate, seed, pool_size, eval_every):
    """Fit the propagation segmentation model on a simulated dataset."""
    config = TrainConfig(
        fusion_mode=fusion,
        base_width=width,
        tile=tile,
        batch_size=batch_size,
        steps=steps,
        learning_rate=learning_rate,
        seed=seed,
        pool_size=pool_size,
        eval_every=eval_every,
    )
    checkpoint, trace = train_segmentation(dataset_dir, weights_dir, out_dir, config)
    final = trace["train_loss"][-1]
    click.echo(f"trained {steps} steps, final loss {final:.6f}, saved {checkpoint}")


@main.command("train-scorer")
@click.argument("labels_manifest", type=click.Path(path_type=Path))
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--crop", type=int, default=16, show_default=True)
@click.option("--width", type=int, default=16, show_default=True)
@click.option("--steps", type=int, default=200, show_default=True)
@click.option("--batch", "batch_size", type=int, default=16, show_default=True)
@click.option("--lr", "learning_rate", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_guarded
def train_scorer(labels_manifest, out_dir, crop, width, steps, batch_size,
                 learning_rate, seed):
    """Fit the pair-similarity classifier on a label stack."""
    stack = read_manifest(labels_manifest)
    volume = np.stack([read_labels(p) for p in stack.paths])
    checkpoint, trace = train_pair_classifier(
        volume,
        out_dir,
        crop=crop,
        width=width,
        steps=steps,
        batch_size=batch_size,
        learning_rate=learning_rate,
        seed=seed,
    )
    click.echo(
        f"trained on {trace['examples']} pairs, accuracy "
        f"{trace['train_accuracy']:.3f}, saved {checkpoint}"
    )


@main.command("export-scorer")
@click.argument("checkpoint", type=click.Path(path_type=Path))
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@_guarded
def export_scorer(checkpoint, out_path):
    """Write a standalone scorer executable bound to a checkpoint."""
    checkpoint = Path(checkpoint).resolve()
    if not checkpoint.is_file():
        raise click.UsageError(f"checkpoint not found: {checkpoint}")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    script = (
        f"#!{sys.executable}\n"
        '"""Pair-similarity scorer speaking the batch-directory protocol."""\n'
        "import sys\n"
        "from grainnet.scorer import run_scorer\n"
        f"sys.exit(run_scorer(sys.argv[1:], checkpoint={str(checkpoint)!r}))\n"
    )
    out_path.write_text(script)
    out_path.chmod(out_path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    click.echo(f"wrote scorer executable {out_path}")


@main.command()
@click.argument("batch_dir", type=click.Path(path_type=Path))
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
def score(batch_dir, checkpoint):
    """Score one batch directory in place (tracker protocol)."""
    sys.exit(run_scorer([str(batch_dir)], checkpoint=checkpoint))


@main.command()
@click.argument("tiles_dir", type=click.Path(path_type=Path))
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--mask-tiles", "mask_tiles_dir", type=click.Path(path_type=Path),
              default=None, help="Previous-slice boundary tiles cut with the same plan.")
@click.option("--batch-size", type=int, default=8, show_default=True)
@_guarded
def predict(tiles_dir, checkpoint, out_dir, mask_tiles_dir, batch_size):
    """Emit probability rasters for a directory of gray tiles."""
    written = predict_tiles(
        tiles_dir,
        checkpoint,
        out_dir,
        mask_tiles_dir=mask_tiles_dir,
        batch_size=batch_size,
    )
    click.echo(f"wrote {len(written)} probability tiles to {out_dir}")


@main.command()
@click.argument("raster", type=click.Path(path_type=Path))
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@_guarded
def binarize(raster, out_path, threshold):
    """Threshold a 2-channel probability raster into a boundary PNG."""
    mask = binarize_probability(read_gsr(raster), threshold)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_boundary(mask, out_path)
    click.echo(f"wrote boundary mask {out_path}")


if __name__ == "__main__":
    main()
