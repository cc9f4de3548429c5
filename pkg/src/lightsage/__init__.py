"""Item-to-item retrieval with the LightSAGE graph neural network."""

from .cf import CfConfig, UserItemClicks, search_cf_scores, scores_to_edges, swing_scores
from .estimator import LightSAGE
from .features import NodeFeatureStore, load_features
from .graph import GraphBuildConfig, ItemGraph, assemble_graph, build_direct_edges, graph_stats
from .ingest import SpamPolicy, SyntheticSpec, filter_spam, generate_synthetic
from .store import EmbeddingStore
from .tail import TailEmbeddingPopulator, resolve_all

__all__ = [
    "CfConfig",
    "EmbeddingStore",
    "GraphBuildConfig",
    "ItemGraph",
    "LightSAGE",
    "NodeFeatureStore",
    "SpamPolicy",
    "SyntheticSpec",
    "TailEmbeddingPopulator",
    "UserItemClicks",
    "assemble_graph",
    "build_direct_edges",
    "filter_spam",
    "generate_synthetic",
    "graph_stats",
    "load_features",
    "resolve_all",
    "scores_to_edges",
    "search_cf_scores",
    "swing_scores",
]

__version__ = "0.1.0"
