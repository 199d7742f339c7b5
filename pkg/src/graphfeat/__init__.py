"""Feature homophily measurement and structure-contrastive feature touch-up."""

__version__ = "0.1.0"

from .adapter import Adapter, AdapterSpec
from .errors import InputError, NumericalError, UndefinedMetricError
from .evaluation import EvalReport, evaluate_lp, evaluate_nc
from .gnn import GnnModel, GnnSpec, gnn_forward, gnn_train_lp, gnn_train_nc
from .graph import (FeatureMatrix, Graph, NodeLabels, SplitSet, load_edge_list, load_features,
                    load_labels, load_split, save_features, save_split, split_edges)
from .metrics import feature_homophily, feature_smoothness, mean_edge_cosine
from .ranking import hits_at_k, mrr
from .synth import SynthSpec, generate
from .trainer import TrainConfig, TrainLog, structure_loss, structure_loss_grad, touchup

__all__ = [
    "Adapter", "AdapterSpec", "EvalReport", "FeatureMatrix", "GnnModel", "GnnSpec", "Graph",
    "InputError", "NodeLabels", "NumericalError", "SplitSet", "SynthSpec", "TrainConfig",
    "TrainLog", "UndefinedMetricError", "evaluate_lp", "evaluate_nc", "feature_homophily",
    "feature_smoothness", "generate", "gnn_forward", "gnn_train_lp", "gnn_train_nc",
    "hits_at_k", "load_edge_list", "load_features", "load_labels", "load_split",
    "mean_edge_cosine", "mrr", "save_features", "save_split", "split_edges", "structure_loss",
    "structure_loss_grad", "touchup",
]
