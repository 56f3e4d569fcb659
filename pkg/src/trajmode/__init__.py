"""trajmode: transportation-mode classification for GPS trajectories.

The pipeline rasterizes each trajectory into a small multi-channel feature
image for a residual CNN, injects periodic structure recovered from point
timestamps into a delta sequence for a dilated causal TCN, and trains the
two branches jointly under an accuracy-weighted fused loss.  Training can
be split across named spatial regions, each trained independently (and
optionally in parallel) with reproducible per-region seeds.
"""
from .config import PipelineConfig, from_dict, load_config
from .data import (
    DEFAULT_CLASSES,
    ClassLabel,
    GpsPoint,
    Trajectory,
    class_labels,
    label_for,
    read_dataset,
    write_dataset,
)
from .errors import CheckpointError, ConfigError, DataError, ParseError, TrajmodeError
from .geolife import StayPointConfig, ingest_directory, parse_labels, parse_plt, segment_stay_points
from .mapping import BoundingBox, GridConfig, TrajectoryImage, build_image, normalize_channels
from .metrics import binary_metrics, confusion, macro_metrics, report_to_dict
from .models import (
    CnnBranch,
    CnnConfig,
    FusionState,
    ModeClassifier,
    TcnBranch,
    TcnConfig,
    combined_loss,
    load_checkpoint,
    prepare_tcn_input,
    save_checkpoint,
    train,
    update_fusion,
)
from .partition import (
    Partition,
    PartitionSet,
    assign_trajectory,
    derive_seed,
    fuse_predictions,
    load_partitions,
    point_in_polygon,
    train_partitioned,
)
from .stl import InjectionConfig, StlConfig, inject_period, loess_smooth, stl_decompose

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "CheckpointError",
    "ClassLabel",
    "CnnBranch",
    "CnnConfig",
    "ConfigError",
    "DEFAULT_CLASSES",
    "DataError",
    "FusionState",
    "GpsPoint",
    "GridConfig",
    "InjectionConfig",
    "ModeClassifier",
    "ParseError",
    "Partition",
    "PartitionSet",
    "PipelineConfig",
    "StayPointConfig",
    "StlConfig",
    "TcnBranch",
    "TcnConfig",
    "Trajectory",
    "TrajectoryImage",
    "TrajmodeError",
    "assign_trajectory",
    "binary_metrics",
    "build_image",
    "class_labels",
    "combined_loss",
    "confusion",
    "derive_seed",
    "from_dict",
    "fuse_predictions",
    "ingest_directory",
    "inject_period",
    "label_for",
    "load_checkpoint",
    "load_config",
    "load_partitions",
    "loess_smooth",
    "macro_metrics",
    "normalize_channels",
    "parse_labels",
    "parse_plt",
    "point_in_polygon",
    "prepare_tcn_input",
    "read_dataset",
    "report_to_dict",
    "save_checkpoint",
    "segment_stay_points",
    "stl_decompose",
    "train",
    "train_partitioned",
    "update_fusion",
    "write_dataset",
]
