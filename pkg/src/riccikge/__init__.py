"""Knowledge-graph embeddings that co-evolve with a gradient-coupled discrete Ricci flow."""

from .curvature import CurvatureConfig, curvature_field, ollivier_ricci
from .flow import FlowConfig, distance_flow_step, flow_pass
from .kg import KnowledgeGraph, load_dataset, sample_negatives
from .metrics import evaluate, rank_filtered
from .models import EmbeddingState, ModelKind, distance, edge_gradients, init_state
from .trainer import TrainConfig, flow_only, train

__version__ = "0.1.0"

__all__ = [
    "CurvatureConfig", "EmbeddingState", "FlowConfig", "KnowledgeGraph", "ModelKind", "TrainConfig",
    "curvature_field", "distance", "distance_flow_step", "edge_gradients", "evaluate", "flow_only",
    "flow_pass", "init_state", "load_dataset", "ollivier_ricci", "rank_filtered", "sample_negatives", "train",
]
