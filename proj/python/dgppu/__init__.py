"""Dynamic-graph post-processing for labeled ultrasound bone point clouds."""

from ._dgppu import (
    Cloud,
    Error,
    Network,
    default_config,
    filter_cloud,
    flag_batch,
    frame_precision,
    knn_graph,
    load_cloud,
    min_class_guarantee,
    phantom,
    solve_minority_fraction,
)

LABELS = ("femur", "patella", "tibia")

__all__ = [
    "Cloud",
    "Error",
    "LABELS",
    "Network",
    "default_config",
    "filter_cloud",
    "flag_batch",
    "frame_precision",
    "knn_graph",
    "load_cloud",
    "min_class_guarantee",
    "phantom",
    "solve_minority_fraction",
]
