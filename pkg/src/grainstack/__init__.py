"""Grain-boundary detection support toolkit.

Serial-section microstructure work in one package: synthetic grain-growth
datasets, boundary-emphasizing loss weight fields, partition metrics,
skeleton/region morphology, cross-slice grain tracking, and overlap-tile
splitting — all behind a deterministic file-based pipeline.
"""

from .model import (
    AXIS_ORDER,
    MANIFEST_KINDS,
    BackendError,
    BoundaryGrid,
    ConsistencyError,
    FloatGrid,
    FormatError,
    GrainRegion,
    GrainstackError,
    GrayGrid,
    LabelGrid,
    ParameterError,
    ProbabilityGrid,
    ResolutionError,
    StackManifest,
    ValidationError,
)
from .io import (
    load_manifest,
    load_stack,
    read_gsr,
    read_raster,
    save_manifest,
    write_gsr,
    write_raster,
    write_stack,
)
from .morphology import (
    DistanceField,
    connected_components,
    dilate,
    distance_transform,
    interior_component_count,
    labels_to_boundary,
    relabel_regions,
    skeletonize,
    volume_components,
)
from .weights import (
    LossResult,
    WeightField,
    WeightParams,
    class_balance_weights,
    compute_weight_field,
    evaluate_loss,
    load_weight_field,
    save_weight_field,
)
from .metrics import (
    DEFAULT_IOU_THRESHOLDS,
    ContingencyTable,
    MetricReport,
    adjusted_rand_index,
    compute_report,
    contingency,
    mean_average_precision,
    variation_of_information,
)
from .potts import (
    PAPER_SIM_PRESET,
    FlawConfig,
    PottsConfig,
    PottsRun,
    generate_dataset,
    potts_energy,
    potts_grow,
    render_gray,
    render_slices,
    write_dataset,
)
from .tracking import (
    BACKENDS,
    CandidatePair,
    SimilarityRecord,
    TrackerConfig,
    TrackResult,
    enumerate_candidates,
    evaluate_tracking,
    make_pair_crop,
    regions_from_labels,
    score_pairs,
    similarity,
    track_stack,
)
from .tiling import Tile, TilePlan, plan_tiles, split, stitch

__version__ = "0.1.0"

__all__ = [
    "AXIS_ORDER",
    "BACKENDS",
    "DEFAULT_IOU_THRESHOLDS",
    "MANIFEST_KINDS",
    "PAPER_SIM_PRESET",
    "BackendError",
    "BoundaryGrid",
    "CandidatePair",
    "ConsistencyError",
    "ContingencyTable",
    "DistanceField",
    "FlawConfig",
    "FloatGrid",
    "FormatError",
    "GrainRegion",
    "GrainstackError",
    "GrayGrid",
    "LabelGrid",
    "LossResult",
    "MetricReport",
    "ParameterError",
    "PottsConfig",
    "PottsRun",
    "ProbabilityGrid",
    "ResolutionError",
    "SimilarityRecord",
    "StackManifest",
    "Tile",
    "TilePlan",
    "TrackResult",
    "TrackerConfig",
    "ValidationError",
    "WeightField",
    "WeightParams",
    "adjusted_rand_index",
    "class_balance_weights",
    "compute_report",
    "compute_weight_field",
    "connected_components",
    "contingency",
    "dilate",
    "distance_transform",
    "enumerate_candidates",
    "evaluate_loss",
    "evaluate_tracking",
    "generate_dataset",
    "interior_component_count",
    "labels_to_boundary",
    "load_manifest",
    "load_stack",
    "load_weight_field",
    "make_pair_crop",
    "mean_average_precision",
    "plan_tiles",
    "potts_energy",
    "potts_grow",
    "read_gsr",
    "read_raster",
    "regions_from_labels",
    "relabel_regions",
    "render_gray",
    "render_slices",
    "save_manifest",
    "save_weight_field",
    "score_pairs",
    "similarity",
    "skeletonize",
    "split",
    "stitch",
    "track_stack",
    "variation_of_information",
    "volume_components",
    "write_dataset",
    "write_gsr",
    "write_raster",
    "write_stack",
]
