"""Point-cloud classification with receptive-field fusion and stratification.

A numpy/scipy toolkit: exact and dilated neighbor graphs, farthest point
sampling hierarchies, graph-convolution layers on a small reverse-mode
autodiff tape, a multi-level decoder trained with a multi-resolution loss,
and evaluation metrics.
"""
from .data import ClassMap, PointCloud, SceneSpec, parse_points, partition_blocks, synth_scene
from .graph import (
    annular_knn,
    build_fusion_graphs,
    build_hierarchy,
    expansion_size,
    farthest_point_sampling,
    knn_search,
    sparse_knn,
)
from .metrics import confusion, per_class_metrics
from .model import ArchConfig, RFFSNet, prepare_block
from .training import TrainConfig, Trainer, mrfa_loss, predict, train

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "ClassMap", "PointCloud", "RFFSNet", "SceneSpec", "TrainConfig", "Trainer",
    "annular_knn", "build_fusion_graphs", "build_hierarchy", "confusion", "expansion_size",
    "farthest_point_sampling", "knn_search", "mrfa_loss", "parse_points", "partition_blocks",
    "per_class_metrics", "predict", "prepare_block", "sparse_knn", "synth_scene", "train",
]
