"""Kolmogorov-Arnold network autoencoders for implicit-feedback recommendation."""
from .data import (
    ContinualBlocks,
    InteractionDataset,
    SplitView,
    load_checkpoint,
    load_interactions,
    save_checkpoint,
    split_continual,
    split_static,
)
from .interpret import ImportanceGraph, compute_importance, explain_item, export_graph, prune
from .kan_layer import KanLayer, LayerActivationRecord, layer_entropy, layer_l1
from .metrics import EvalReport, continual_metrics, evaluate_model, ndcg_at_k, rank_topk, recall_at_k
from .model import CfModel, ModelConfig, build_model
from .spline import SplineGrid, basis_derivatives, basis_values, make_grid, spline_eval
from .training import Adam, DeltaTrace, DeltaTracker, TrainConfig, continual_train, track_deltas, train

__version__ = "0.1.0"
