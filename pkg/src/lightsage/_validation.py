"""Input checks shared by the estimators."""

import numpy as np

from .exceptions import ConfigError, EmptyGraphError


def check_graph(graph):
    from .graph import ItemGraph

    if not isinstance(graph, ItemGraph):
        raise TypeError(f"expected an ItemGraph, got {type(graph).__name__}")
    if graph.n_edges == 0:
        raise EmptyGraphError("graph has no edges")
    return graph


def check_features_cover(features, items):
    missing = [it for it in items if it not in features]
    if missing:
        raise ConfigError(f"{len(missing)} graph items lack feature rows, e.g. {missing[:3]}")
    return features


def check_store(store, dim=None):
    from .store import EmbeddingStore

    if not isinstance(store, EmbeddingStore):
        raise TypeError(f"expected an EmbeddingStore, got {type(store).__name__}")
    if dim is not None and store.dim != dim:
        raise ConfigError(f"embedding dimension {store.dim} != expected {dim}")
    return store


def check_fraction(value, name, low=0.0, high=1.0, open_low=True, open_high=True):
    ok_low = value > low if open_low else value >= low
    ok_high = value < high if open_high else value <= high
    if not (ok_low and ok_high and np.isfinite(value)):
        raise ConfigError(f"{name}={value} out of range")
    return value
