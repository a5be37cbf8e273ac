"""Toy-scale training stack for grain-boundary segmentation.

Builds on the simulator/weights/metrics toolchain purely through its file
formats: datasets and weight fields come in as directories, probability
tiles and scorer executables go out.
"""

from .errors import (
    DataError,
    FormatError,
    GrainnetError,
    ProtocolError,
    ShapeError,
)
from .formats import (
    Stack,
    TileSet,
    WeightPlanes,
    load_weight_planes,
    read_boundary,
    read_gray,
    read_gsr,
    read_labels,
    read_manifest,
    read_tile_listing,
    write_boundary,
    write_gsr,
    write_manifest,
    write_tile_listing,
)
from .data import SliceDataset, TileCrop
from .loss import PROBABILITY_CLAMP, adaptive_loss, loss_from_planes
from .model import (
    FUSION_MODES,
    ModelConfig,
    PairClassifier,
    PropagationUNet,
    build_segmentation_model,
    parameter_count,
)
from .pairs import PairExample, harvest_pairs, pair_batch, pair_crop
from .predict import binarize_probability, predict_tiles
from .scorer import run_scorer, score_batch
from .train import (
    TrainConfig,
    load_checkpoint,
    train_pair_classifier,
    train_segmentation,
    variation_lite,
)

__all__ = [
    "DataError",
    "FormatError",
    "GrainnetError",
    "ProtocolError",
    "ShapeError",
    "Stack",
    "TileSet",
    "WeightPlanes",
    "load_weight_planes",
    "read_boundary",
    "read_gray",
    "read_gsr",
    "read_labels",
    "read_manifest",
    "read_tile_listing",
    "write_boundary",
    "write_gsr",
    "write_manifest",
    "write_tile_listing",
    "SliceDataset",
    "TileCrop",
    "PROBABILITY_CLAMP",
    "adaptive_loss",
    "loss_from_planes",
    "FUSION_MODES",
    "ModelConfig",
    "PairClassifier",
    "PropagationUNet",
    "build_segmentation_model",
    "parameter_count",
    "PairExample",
    "harvest_pairs",
    "pair_batch",
    "pair_crop",
    "binarize_probability",
    "predict_tiles",
    "run_scorer",
    "score_batch",
    "TrainConfig",
    "load_checkpoint",
    "train_pair_classifier",
    "train_segmentation",
    "variation_lite",
]
