"""Toy CPU trainers for the segmentation and pair-similarity models.

Both loops are deterministic under a fixed seed: data order comes from a
seeded generator, model initialization from ``torch.manual_seed``, and
everything runs single-threaded on CPU.  Checkpoints store the weights
together with the reconstruction arguments so a checkpoint file alone is
enough to rebuild the model.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .data import SliceDataset
from .errors import DataError, FormatError
from .loss import adaptive_loss
from .model import ModelConfig, PairClassifier, PropagationUNet, build_segmentation_model
from .pairs import harvest_pairs, pair_batch

_CROSS_2D = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for the segmentation trainer.

    Defaults are the documented toy recipe — a 64-wide base, batches of
    four 64x64 tiles — sized for minutes on a CPU, not the full-scale
    GPU schedule.
    """

    fusion_mode: str = "layer1"
    base_width: int = 64
    tile: int = 64
    batch_size: int = 4
    steps: int = 200
    learning_rate: float = 1e-3
    seed: int = 0
    pool_size: int | None = None
    eval_every: int = 50

    def __post_init__(self) -> None:
        if self.tile % 16 != 0:
            raise DataError(f"tile must be a multiple of 16, got {self.tile}")
        if self.steps < 1 or self.batch_size < 1:
            raise DataError("steps and batch_size must be positive")


def variation_lite(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Variation-of-information between two integer labelings (monitoring).

    Pixels where the reference labeling is zero (boundary ink) are
    ignored; zeros in the prediction count as one catch-all region so a
    prediction with no regions at all scores the full reference entropy
    rather than a hollow zero.
    """
    keep = truth != 0
    if not keep.any():
        return 0.0
    a = predicted[keep].ravel()
    b = truth[keep].ravel()
    _, a = np.unique(a, return_inverse=True)
    _, b = np.unique(b, return_inverse=True)
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    h_ab = -np.sum(joint[nz] * np.log2((joint / pa)[nz]))
    h_ba = -np.sum(joint[nz] * np.log2((joint / pb)[nz]))
    return float(h_ab + h_ba)


def predicted_regions(probabilities: torch.Tensor) -> np.ndarray:
    """Region partition implied by a (1, 2, h, w) probability map.

    Open pixels (class-1 probability below 0.5) are grouped into
    connected components; boundary-ink pixels are then assigned to the
    nearest open region so the score reflects region structure rather
    than stroke thickness.  A prediction with no open pixels at all
    keeps everything in the zero cluster and scores accordingly badly.
    """
    open_pixels = (probabilities[0, 1] < 0.5).cpu().numpy()
    labeled, count = ndimage.label(open_pixels, structure=_CROSS_2D)
    ink = ~open_pixels
    if count and ink.any():
        _, nearest = ndimage.distance_transform_edt(ink, return_indices=True)
        labeled = labeled[tuple(nearest)]
    return labeled


def _evaluate(
    model: PropagationUNet, dataset: SliceDataset, z: int
) -> tuple[float, float | None]:
    inputs, window = dataset.full_slice_input(z, 2 ** model.config.depth)
    planes = dataset.weights[z]
    with torch.no_grad():
        logits = model.logits(inputs)
        loss = adaptive_loss(
            logits,
            torch.from_numpy(planes.w_bck[window]),
            torch.from_numpy(planes.w_obj[window]),
            torch.from_numpy(planes.m_d[window]),
            reduction="mean",
        )
        vi = None
        if dataset.labels is not None:
            regions = predicted_regions(torch.softmax(logits, dim=1))
            vi = variation_lite(regions, dataset.labels[z][window])
    return float(loss), vi


def train_segmentation(
    dataset_dir: str | Path,
    weights_dir: str | Path,
    out_dir: str | Path,
    config: TrainConfig = TrainConfig(),
) -> tuple[Path, dict]:
    """Fit the propagation model; returns (checkpoint path, trace dict)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)
    dataset = SliceDataset(dataset_dir, weights_dir)
    holdout = dataset.holdout_index
    pool_size = config.pool_size or config.steps * config.batch_size
    pool = dataset.tile_pool(config.tile, pool_size, config.seed, exclude=holdout)

    model = build_segmentation_model(
        ModelConfig(base_width=config.base_width, fusion_mode=config.fusion_mode)
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed + 1)

    trace: dict = {"train_loss": [], "evals": []}
    model.train()
    for step in range(config.steps):
        if len(pool) <= config.batch_size:
            picks = np.arange(len(pool))  # pool fits in one batch: train full-batch
        else:
            picks = rng.integers(0, len(pool), size=config.batch_size)
        batch = dataset.materialize([pool[i] for i in picks], config.tile)
        optimizer.zero_grad()
        loss = adaptive_loss(model.logits(batch[0]), *batch[1:], reduction="mean")
        loss.backward()
        optimizer.step()
        trace["train_loss"].append(float(loss.detach()))
        last_step = step == config.steps - 1
        if holdout is not None and (step % config.eval_every == 0 or last_step):
            model.eval()
            val_loss, val_vi = _evaluate(model, dataset, holdout)
            model.train()
            trace["evals"].append({"step": step, "val_loss": val_loss, "val_vi": val_vi})

    checkpoint_path = out_dir / "model.pt"
    torch.save(
        {
            "kind": "segmentation",
            "state": model.state_dict(),
            "model": {
                "base_width": config.base_width,
                "fusion_mode": config.fusion_mode,
            },
        },
        checkpoint_path,
    )
    (out_dir / "trace.json").write_text(json.dumps(trace, indent=2) + "\n")
    (out_dir / "config.json").write_text(json.dumps(asdict(config), indent=2) + "\n")
    return checkpoint_path, trace


def train_pair_classifier(
    volume: np.ndarray,
    out_dir: str | Path,
    *,
    crop: int = 16,
    width: int = 16,
    steps: int = 200,
    batch_size: int = 16,
    learning_rate: float = 1e-3,
    seed: int = 0,
) -> tuple[Path, dict]:
    """Fit the similarity scorer on pairs harvested from a label volume."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    examples = harvest_pairs(volume)
    if not examples:
        raise DataError("volume yields no overlapping region pairs")
    inputs, targets = pair_batch(volume, examples, crop)
    inputs_t = torch.from_numpy(inputs)
    targets_t = torch.from_numpy(targets)

    model = PairClassifier(width=width)
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    objective = torch.nn.CrossEntropyLoss()
    rng = np.random.default_rng(seed + 1)

    trace: dict = {"train_loss": [], "examples": len(examples)}
    model.train()
    for _ in range(steps):
        picks = rng.integers(0, len(examples), size=min(batch_size, len(examples)))
        optimizer.zero_grad()
        loss = objective(model.logits(inputs_t[picks]), targets_t[picks])
        loss.backward()
        optimizer.step()
        trace["train_loss"].append(float(loss.detach()))

    model.eval()
    with torch.no_grad():
        predictions = model.forward(inputs_t).argmax(dim=1)
    trace["train_accuracy"] = float((predictions == targets_t).float().mean())

    checkpoint_path = out_dir / "scorer.pt"
    torch.save(
        {"kind": "pair", "state": model.state_dict(), "model": {"width": width}},
        checkpoint_path,
    )
    (out_dir / "trace.json").write_text(json.dumps(trace, indent=2) + "\n")
    return checkpoint_path, trace


def load_checkpoint(path: str | Path) -> PropagationUNet | PairClassifier:
    """Rebuild a model from a checkpoint written by either trainer."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    kind = payload.get("kind") if isinstance(payload, dict) else None
    if kind == "segmentation":
        model: PropagationUNet | PairClassifier = build_segmentation_model(
            ModelConfig(**payload["model"])
        )
    elif kind == "pair":
        model = PairClassifier(**payload["model"])
    else:
        raise FormatError(f"{path}: not a recognized checkpoint")
    model.load_state_dict(payload["state"])
    model.eval()
    return model
