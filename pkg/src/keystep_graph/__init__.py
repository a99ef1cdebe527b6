"""Keystep recognition as node classification on sparse segment graphs."""
from .datamodel import (
    FeatureTable,
    Manifest,
    SegmentAnnotation,
    TakeRecord,
    ViewRecord,
    load_features,
    load_manifest,
    pool_segment_features,
    write_features,
    write_manifest,
)
from .graphs import (
    ContextMode,
    EdgeType,
    Graph,
    NodeType,
    build_ego_graphs,
    build_hetero_graphs,
    build_multiview_graphs,
    graph_stats,
)
from .model import ModelConfig, ModelParams, forward, init_params, predict
from .trainer import TrainConfig, Variant, cross_validate, make_folds, train_fold
from .synthgen import SynthConfig, generate

__all__ = [
    "FeatureTable",
    "Manifest",
    "SegmentAnnotation",
    "TakeRecord",
    "ViewRecord",
    "load_features",
    "load_manifest",
    "pool_segment_features",
    "write_features",
    "write_manifest",
    "ContextMode",
    "EdgeType",
    "Graph",
    "NodeType",
    "build_ego_graphs",
    "build_hetero_graphs",
    "build_multiview_graphs",
    "graph_stats",
    "ModelConfig",
    "ModelParams",
    "forward",
    "init_params",
    "predict",
    "TrainConfig",
    "Variant",
    "cross_validate",
    "make_folds",
    "train_fold",
    "SynthConfig",
    "generate",
]

__version__ = "0.1.0"
