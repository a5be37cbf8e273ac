"""Command-line pipeline: simulate, weights, eval, track, reconstruct,
skeletonize, and tile handling.

Every subcommand writes its resolved parameters to ``<out>/config.json`` so
any artifact can be regenerated from its output directory alone.  Exit codes:
0 success, 2 usage error, 3 data or validation error, 4 external-backend
error.  The worker-thread count comes from ``--threads``, then the
``GRAINSTACK_THREADS`` environment variable, then the machine's CPU count;
results never depend on it.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import io as gio
from . import metrics as gmetrics
from . import morphology as gmorph
from . import potts as gpotts
from . import tiling as gtiling
from . import tracking as gtracking
from . import weights as gweights
from .model import (
    BackendError,
    BoundaryGrid,
    GrainstackError,
    LabelGrid,
    ValidationError,
)

THREADS_ENV = "GRAINSTACK_THREADS"

_EXIT_DATA = 3
_EXIT_BACKEND = 4

_RASTER_KINDS = ("label", "boundary", "gray", "probability", "weight")


def _fail(code: int, message: str) -> "SystemExit":
    click.echo(f"error: {message}", err=True)
    return SystemExit(code)


def _guarded(command):
    """Map domain errors to the documented exit codes."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except BackendError as exc:
            raise _fail(_EXIT_BACKEND, str(exc)) from exc
        except GrainstackError as exc:
            raise _fail(_EXIT_DATA, str(exc)) from exc
        except OSError as exc:
            raise _fail(_EXIT_DATA, str(exc)) from exc

    return wrapper


def _resolve_threads(flag: int | None) -> int:
    if flag is not None:
        if flag < 1:
            raise click.UsageError(f"--threads must be >= 1, got {flag}")
        return flag
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise click.UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}")
        if value < 1:
            raise click.UsageError(f"{THREADS_ENV} must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def _apply_threads(count: int) -> None:
    # Numba is the only threaded kernel host; results are thread-agnostic.
    try:
        import numba

        numba.set_num_threads(min(count, numba.config.NUMBA_NUM_THREADS))
    except Exception:
        pass


def _echo_config(out_dir: Path, command: str, params: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command}
    doc.update(params)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    (out_dir / "config.json").write_text(text)


def _load_partitions(
    manifest_path: Path, *, skeletonize_first: bool, role: str
) -> list[LabelGrid]:
    """Read a stack as per-slice partitions, deriving them when needed.

    Label stacks pass through; boundary stacks become connected components
    (optionally skeletonized first); probability stacks threshold channel 1
    at 0.5 into a boundary and continue the same way.
    """
    manifest, grids = gio.load_stack(manifest_path)
    if manifest.kind == "label":
        if skeletonize_first:
            raise click.UsageError(
                f"--skeletonize-first requires boundary or probability input, "
                f"but {manifest_path} holds labels"
            )
        return list(grids)
    if manifest.kind == "probability":
        grids = [
            BoundaryGrid((g.data[:, :, 1] > 0.5).astype(np.uint8)) for g in grids
        ]
    elif manifest.kind == "boundary":
        grids = list(grids)
    else:
        raise ValidationError(
            f"{role} stack must hold labels, boundaries or probabilities, "
            f"got kind {manifest.kind!r}"
        )
    if skeletonize_first:
        grids = [gmorph.skeletonize(g) for g in grids]
    return [gmorph.connected_components(g, 4) for g in grids]


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--threads", type=int, default=None, help="Worker thread budget.")
@click.pass_context
def main(ctx: click.Context, threads: int | None) -> None:
    """Grain-boundary toolkit: simulation, weighting, metrics, tracking."""
    resolved = _resolve_threads(threads)
    _apply_threads(resolved)
    ctx.obj = {"threads": resolved}


# --------------------------------------------------------------------------- simulate


@main.command()
@click.option("--size", type=int, default=None, help="Square slice side (shorthand).")
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.option("--slices", type=int, default=None, help="Stack depth.")
@click.option("--q", type=int, default=None, help="Spin state count.")
@click.option("--temperature", type=float, default=None)
@click.option("--steps", type=int, default=None, help="Growth sweeps.")
@click.option("--seed", type=int, default=None)
@click.option("--neighborhood", type=click.Choice(["6", "26"]), default=None)
@click.option("--preset", type=click.Choice(["paper-sim"]), default=None,
              help="Start from the 400x400x400 reference recipe.")
@click.option("--flaws", is_flag=True,
              help="Also render gray slices with the configured flaws.")
@click.option("--blur-segments", type=int, default=0)
@click.option("--blur-length", type=int, default=12)
@click.option("--blur-persistence", type=int, default=1)
@click.option("--noise-density", type=float, default=0.0)
@click.option("--scratch-count", type=int, default=0)
@click.option("--scratch-intensity", type=int, default=120)
@click.option("--flaw-seed", type=int, default=0)
@click.option("--pixel-size", type=float, default=1.0)
@click.option("--z-spacing", type=float, default=1.0)
@click.option("--render-seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_guarded
def simulate(size, width, height, slices, q, temperature, steps, seed,
             neighborhood, preset, flaws, blur_segments, blur_length,
             blur_persistence, noise_density, scratch_count, scratch_intensity,
             flaw_seed, pixel_size, z_spacing, render_seed, out_dir):
    """Grow a grain volume and write the dataset directory."""
    if preset == "paper-sim":
        base = gpotts.PAPER_SIM_PRESET
    else:
        base = gpotts.PottsConfig(
            width=64, height=64, depth=8, q=64, steps=120, seed=0
        )
    if size is not None and (width is not None or height is not None):
        raise click.UsageError("--size conflicts with --width/--height")
    config = gpotts.PottsConfig(
        width=width if width is not None else (size if size is not None else base.width),
        height=height if height is not None else (size if size is not None else base.height),
        depth=slices if slices is not None else base.depth,
        q=q if q is not None else base.q,
        temperature=temperature if temperature is not None else base.temperature,
        steps=steps if steps is not None else base.steps,
        seed=seed if seed is not None else base.seed,
        neighborhood=int(neighborhood) if neighborhood is not None else base.neighborhood,
    )
    flaw_config = None
    if flaws:
        flaw_config = gpotts.FlawConfig(
            blur_segments_per_slice=blur_segments,
            blur_length=blur_length,
            blur_persistence=blur_persistence,
            noise_density=noise_density,
            scratch_count=scratch_count,
            scratch_intensity=scratch_intensity,
            seed=flaw_seed,
        )
    run, paths = gpotts.generate_dataset(
        config,
        out_dir,
        flaw_config=flaw_config,
        pixel_size_xy=pixel_size,
        z_spacing=z_spacing,
        render_seed=render_seed,
    )
    click.echo(
        f"wrote {config.depth} slices of {config.width}x{config.height} "
        f"to {out_dir} (volume hash {run.volume_hash()[:12]})"
    )


# --------------------------------------------------------------------------- weights


@main.command()
@click.argument("manifest", type=click.Path(path_type=Path))
@click.option("--w0", type=float, default=10.0, show_default=True)
@click.option("--gamma", type=float, default=2.58, show_default=True)
@click.option("--dilate-radius", type=float, default=2.0, show_default=True)
@click.option("--class-balance", type=click.Choice(["frequency", "none"]),
              default="frequency", show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_guarded
def weights(manifest, w0, gamma, dilate_radius, class_balance, out_dir):
    """Compute per-slice loss weight fields from a boundary or label stack."""
    params = gweights.WeightParams(
        w0=w0, gamma=gamma, dilate_radius=dilate_radius, class_balance=class_balance
    )
    stack_manifest, grids = gio.load_stack(manifest)
    if stack_manifest.kind == "label":
        masks = [gmorph.labels_to_boundary(g, 8) for g in grids]
    elif stack_manifest.kind == "boundary":
        masks = list(grids)
    else:
        raise ValidationError(
            f"weight input must be a label or boundary stack, got {stack_manifest.kind!r}"
        )
    out_dir = Path(out_dir)
    _echo_config(out_dir, "weights", {
        "manifest": str(manifest),
        "w0": w0,
        "gamma": gamma,
        "dilate_radius": dilate_radius,
        "class_balance": class_balance,
    })
    names = []
    for z, mask in enumerate(masks):
        field = gweights.compute_weight_field(mask, params)
        name = f"slice_{z:04d}.gsr"
        gweights.save_weight_field(field, out_dir / name)
        names.append(name)
    weight_manifest = gio.StackManifest(
        kind="weight",
        pixel_size_xy=stack_manifest.pixel_size_xy,
        z_spacing=stack_manifest.z_spacing,
        slices=tuple(names),
    )
    gio.save_manifest(weight_manifest, out_dir / "weights.json")
    click.echo(f"wrote {len(names)} weight fields to {out_dir}")


# --------------------------------------------------------------------------- eval


@main.command("eval")
@click.argument("pred_manifest", type=click.Path(path_type=Path))
@click.argument("gt_manifest", type=click.Path(path_type=Path))
@click.option("--skeletonize-first", is_flag=True,
              help="Thin predicted boundaries before extracting regions.")
@click.option("--per-slice-csv", is_flag=True,
              help="Also write per_slice.csv next to the report.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_guarded
def eval_command(pred_manifest, gt_manifest, skeletonize_first, per_slice_csv, out_dir):
    """Score predicted partitions against ground truth, slice by slice.

    Aggregate numbers are per-slice means; the JSON report follows the
    packaged report schema.
    """
    preds = _load_partitions(
        pred_manifest, skeletonize_first=skeletonize_first, role="prediction"
    )
    gts = _load_partitions(gt_manifest, skeletonize_first=False, role="ground-truth")
    if len(preds) != len(gts):
        raise ValidationError(
            f"stacks disagree in depth: {len(preds)} vs {len(gts)} slices"
        )
    per_slice = []
    for z, (pred, gt) in enumerate(zip(preds, gts)):
        report = gmetrics.compute_report(pred, gt)
        entry = {"slice": z}
        entry.update(report.to_dict())
        per_slice.append(entry)

    def mean(key: str) -> float:
        return float(np.mean([e[key] for e in per_slice]))

    thresholds = [t for t, _ in per_slice[0]["per_threshold_ap"]]
    aggregate = {
        "vi": mean("vi"),
        "vi_merge": mean("vi_merge"),
        "vi_split": mean("vi_split"),
        "ari": mean("ari"),
        "map": mean("map"),
        "per_threshold_ap": [
            [
                t,
                float(np.mean([e["per_threshold_ap"][i][1] for e in per_slice])),
            ]
            for i, t in enumerate(thresholds)
        ],
        "per_slice": per_slice,
    }
    out_dir = Path(out_dir)
    _echo_config(out_dir, "eval", {
        "pred_manifest": str(pred_manifest),
        "gt_manifest": str(gt_manifest),
        "skeletonize_first": skeletonize_first,
    })
    (out_dir / "report.json").write_text(json.dumps(aggregate, indent=2) + "\n")
    if per_slice_csv:
        with open(out_dir / "per_slice.csv", "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["slice", "vi", "vi_merge", "vi_split", "ari", "map"])
            for e in per_slice:
                writer.writerow(
                    [e["slice"], e["vi"], e["vi_merge"], e["vi_split"], e["ari"], e["map"]]
                )
    click.echo(
        f"vi={aggregate['vi']:.6f} (merge {aggregate['vi_merge']:.6f} / "
        f"split {aggregate['vi_split']:.6f}) ari={aggregate['ari']:.6f} "
        f"map={aggregate['map']:.6f}"
    )


# --------------------------------------------------------------------------- track


@main.command()
@click.argument("manifest", type=click.Path(path_type=Path))
@click.option("--backend", type=click.Choice(list(gtracking.BACKENDS)),
              default="max_overlap", show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--crop-size", type=int, default=64, show_default=True)
@click.option("--scorer", type=click.Path(path_type=Path), default=None,
              help="External pair-scorer executable (batch protocol).")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_guarded
def track(manifest, backend, threshold, crop_size, scorer, out_dir):
    """Link regions across slices into a global 3D labeling."""
    # A scorer given as an existing file runs as that file; bare names fall
    # through to PATH lookup.
    scorer_cmd = None
    if scorer is not None:
        scorer_cmd = str(scorer.resolve()) if scorer.exists() else str(scorer)
    config = gtracking.TrackerConfig(
        backend=backend,
        threshold=threshold,
        crop_size=crop_size,
        scorer=scorer_cmd,
    )
    stack_manifest, grids = gio.load_stack(manifest)
    if stack_manifest.kind == "boundary":
        grids = [gmorph.connected_components(g, 4) for g in grids]
    elif stack_manifest.kind != "label":
        raise ValidationError(
            f"tracking input must be a label or boundary stack, got {stack_manifest.kind!r}"
        )
    out_dir = Path(out_dir)
    _echo_config(out_dir, "track", {
        "manifest": str(manifest),
        "backend": backend,
        "threshold": threshold,
        "crop_size": crop_size,
        "scorer": str(scorer) if scorer else None,
    })
    started = time.perf_counter()
    result, volume = gtracking.track_stack(grids, config)
    duration = time.perf_counter() - started

    slices = [LabelGrid(volume[z]) for z in range(volume.shape[0])]
    gio.write_stack(
        slices,
        out_dir / "labels",
        "label",
        pixel_size_xy=stack_manifest.pixel_size_xy,
        z_spacing=stack_manifest.z_spacing,
        manifest_name="manifest.json",
    )
    summary = {
        "duration_seconds": duration,
        "slice_count": volume.shape[0],
        "label_count": result.label_count,
        "appearances": [list(entry) for entry in result.new_labels],
        "disappearances": [list(entry) for entry in result.terminated],
    }
    (out_dir / "tracking.json").write_text(json.dumps(summary, indent=2) + "\n")
    log_rows = [
        {
            "slice": r.slice_index,
            "this_id": r.this_id,
            "last_id": r.last_id,
            "overlap_area": r.overlap_area,
            "centroid_distance": r.centroid_distance,
            "similarity": r.similarity,
            "chosen": r.chosen,
        }
        for r in result.similarity_log
    ]
    (out_dir / "similarity_log.json").write_text(json.dumps(log_rows, indent=2) + "\n")
    click.echo(
        f"tracked {volume.shape[0]} slices into {result.label_count} grains "
        f"in {duration:.3f}s"
    )


# --------------------------------------------------------------------------- reconstruct


@main.command()
@click.argument("manifest", type=click.Path(path_type=Path))
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_guarded
def reconstruct(manifest, out_dir):
    """Assemble a tracked label stack into volume files plus grain stats."""
    stack_manifest, grids = gio.load_stack(manifest)
    if stack_manifest.kind != "label":
        raise ValidationError(
            f"reconstruction needs a label stack, got {stack_manifest.kind!r}"
        )
    volume = np.stack([g.data for g in grids])
    out_dir = Path(out_dir)
    _echo_config(out_dir, "reconstruct", {"manifest": str(manifest)})
    gio.write_stack(
        grids,
        out_dir / "labels",
        "label",
        pixel_size_xy=stack_manifest.pixel_size_xy,
        z_spacing=stack_manifest.z_spacing,
        manifest_name="manifest.json",
    )
    counts = np.bincount(volume.reshape(-1).astype(np.int64))
    labels = np.flatnonzero(counts)
    labels = labels[labels != 0]
    stats = {
        "grain_count": int(labels.size),
        "slice_count": int(volume.shape[0]),
        "total_voxels": int(counts[labels].sum()),
        "volumes": {str(int(label)): int(counts[label]) for label in labels},
    }
    (out_dir / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    click.echo(
        f"reconstructed {stats['grain_count']} grains over "
        f"{stats['slice_count']} slices ({stats['total_voxels']} voxels)"
    )


# --------------------------------------------------------------------------- skeletonize


@main.command()
@click.argument("source", type=click.Path(path_type=Path))
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_guarded
def skeletonize(source, out_dir):
    """Thin thick boundary rasters to single-pixel width.

    SOURCE is a boundary manifest (.json) or a single boundary PNG; output
    lands in --out as a stack (boundary.json) or skeleton.png respectively.
    """
    out_dir = Path(out_dir)
    _echo_config(out_dir, "skeletonize", {"source": str(source)})
    if source.suffix == ".json":
        stack_manifest, grids = gio.load_stack(source)
        if stack_manifest.kind != "boundary":
            raise ValidationError(
                f"skeletonize needs boundary rasters, got {stack_manifest.kind!r}"
            )
        thin = [gmorph.skeletonize(g) for g in grids]
        gio.write_stack(
            thin,
            out_dir,
            "boundary",
            pixel_size_xy=stack_manifest.pixel_size_xy,
            z_spacing=stack_manifest.z_spacing,
        )
        click.echo(f"skeletonized {len(thin)} slices to {out_dir}")
    else:
        grid = gio.read_raster(source, "boundary")
        gio.write_raster(gmorph.skeletonize(grid), out_dir / "skeleton.png")
        click.echo(f"skeletonized {source} to {out_dir / 'skeleton.png'}")


# --------------------------------------------------------------------------- tiles


@main.group()
def tiles() -> None:
    """Overlap-tile splitting and stitching."""


@tiles.command("split")
@click.argument("source", type=click.Path(path_type=Path))
@click.option("--kind", type=click.Choice(_RASTER_KINDS), required=True)
@click.option("--tile", "tile_size", type=int, default=256, show_default=True)
@click.option("--overlap", type=int, default=32, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_guarded
def tiles_split(source, kind, tile_size, overlap, out_dir):
    """Cut one raster into overlapping tiles plus a plan file."""
    grid = gio.read_raster(source, kind)
    plan = gtiling.plan_tiles(
        (grid.data.shape[1], grid.data.shape[0]), tile_size, overlap
    )
    pieces = gtiling.split(grid, plan)
    out_dir = Path(out_dir)
    _echo_config(out_dir, "tiles split", {
        "source": str(source),
        "kind": kind,
        "tile_size": tile_size,
        "overlap": overlap,
    })
    ext = ".gsr" if kind in ("probability", "weight") else ".png"
    names = []
    for i, piece in enumerate(pieces):
        name = f"tile_{i:04d}{ext}"
        gio.write_raster(piece, out_dir / name)
        names.append(name)
    plan.save(out_dir / "plan.json")
    listing = {"kind": kind, "plan": "plan.json", "tiles": names}
    (out_dir / "tiles.json").write_text(json.dumps(listing, indent=2) + "\n")
    click.echo(f"wrote {len(names)} tiles to {out_dir}")


@tiles.command("stitch")
@click.argument("source", type=click.Path(path_type=Path))
@click.option("--plan", "plan_path", type=click.Path(path_type=Path), default=None,
              help="Tile plan (defaults to plan.json inside SOURCE).")
@click.option("--kind", type=click.Choice(_RASTER_KINDS), default=None,
              help="Raster kind (defaults to the tiles.json entry).")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_guarded
def tiles_stitch(source, plan_path, kind, out_dir):
    """Reassemble tiles from a directory into one raster.

    SOURCE is a tile directory: tiles.json supplies order and kind when
    present, otherwise tile_* files sort lexicographically and --kind is
    required.
    """
    source = Path(source)
    listing_path = source / "tiles.json"
    if listing_path.is_file():
        listing = json.loads(listing_path.read_text())
        names = listing["tiles"]
        kind = kind or listing["kind"]
        plan_path = plan_path or source / listing.get("plan", "plan.json")
    else:
        names = sorted(
            p.name for p in source.iterdir() if p.name.startswith("tile_")
        )
        if kind is None:
            raise click.UsageError("--kind is required without a tiles.json listing")
        plan_path = plan_path or source / "plan.json"
    plan = gtiling.TilePlan.load(plan_path)
    pieces = [gio.read_raster(source / name, kind) for name in names]
    stitched = gtiling.stitch(pieces, plan)
    out_dir = Path(out_dir)
    _echo_config(out_dir, "tiles stitch", {
        "source": str(source),
        "plan": str(plan_path),
        "kind": kind,
    })
    ext = ".gsr" if kind in ("probability", "weight") else ".png"
    target = out_dir / f"stitched{ext}"
    gio.write_raster(stitched, target)
    click.echo(f"stitched {len(pieces)} tiles into {target}")


if __name__ == "__main__":
    sys.exit(main())
