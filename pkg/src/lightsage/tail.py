"""Embeddings for long-tail items from seed embeddings."""

from __future__ import annotations

from collections import defaultdict

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_store
from .exceptions import ConfigError
from .graph import ItemGraph
from .store import CONTENT_POPULATED, GNN_SEED, GRAPH_POPULATED, EmbeddingStore

LEVELS = (0, 1, 2)
STRATEGIES = ("none", "content", "graph", "content+graph")


class SeedIndex:
    """Content key -> seed items, per matching level, plus the global seed mean."""

    def __init__(self, seeds: EmbeddingStore, features):
        self.seeds = seeds
        self.keys = {level: defaultdict(list) for level in LEVELS}
        seed_items = [it for it, p in zip(seeds.items, seeds.provenance) if p == GNN_SEED]
        if not seed_items:
            raise ConfigError("no gnn-seed items to index")
        for it in sorted(seed_items):
            if it not in features:
                continue
            for level in LEVELS:
                self.keys[level][features.content_key(it, level)].append(it)
        self.global_mean = np.mean([seeds[it] for it in sorted(seed_items)], axis=0)

    def matches(self, key, level):
        return self.keys[level].get(key, [])


def _seed_neighbors(graph: ItemGraph, seeds: EmbeddingStore, item):
    """Seed neighbors in either direction with both directions' weights summed."""
    i = graph.index.get(item)
    if i is None:
        return {}
    weights = defaultdict(float)
    dst, w = graph.out_neighbors(i)
    for j, wj in zip(dst.tolist(), w.tolist()):
        weights[graph.items[j]] += wj
    csc = _with_csc(graph)._csc
    lo, hi = csc.indptr[i], csc.indptr[i + 1]
    srcs, ws = csc.indices[lo:hi], csc.data[lo:hi]
    for j, wj in zip(np.asarray(srcs).tolist(), np.asarray(ws).tolist()):
        weights[graph.items[j]] += wj
    return {
        it: wt for it, wt in weights.items()
        if it in seeds and seeds.provenance_of(it) == GNN_SEED
    }


def populate_by_graph(inference_graph: ItemGraph, seeds: EmbeddingStore, item):
    """Weighted mean of seed-neighbor embeddings, or None without seed neighbors."""
    nbrs = _seed_neighbors(inference_graph, seeds, item)
    if not nbrs:
        return None
    order = sorted(nbrs)
    total = sum(nbrs[it] for it in order)
    out = np.zeros(seeds.dim)
    for it in order:
        out += (nbrs[it] / total) * seeds[it]
    return out


def populate_by_content(item, features, index: SeedIndex, min_seeds: int = 3) -> np.ndarray:
    """Mean of seeds sharing the finest content key with at least ``min_seeds`` matches."""
    if item in features:
        for level in LEVELS:
            matched = index.matches(features.content_key(item, level), level)
            if len(matched) >= min_seeds:
                return np.mean([index.seeds[it] for it in matched], axis=0)
    return index.global_mean.copy()


def _with_csc(graph):
    if graph is not None and not hasattr(graph, "_csc"):
        graph._csc = graph.to_csr().tocsc()
        graph._csc.sort_indices()
    return graph


def resolve_all(seeds: EmbeddingStore, inference_graph, features, min_seeds: int = 3,
                strategy: str = "content+graph") -> EmbeddingStore:
    """Complete store over the feature pool plus all seeds.

    Seeds keep their vectors. Other items take the inference-graph average when they
    have seed neighbors, else the content average. ``strategy`` switches either
    logic off for ablations; with "none" only seeds are returned.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown tail strategy {strategy!r}")
    check_store(seeds)
    seed_mask = [p == GNN_SEED for p in seeds.provenance]
    seed_store = EmbeddingStore(
        [it for it, m in zip(seeds.items, seed_mask) if m], seeds.vectors[seed_mask], GNN_SEED
    )
    if strategy == "none":
        return seed_store
    use_graph = "graph" in strategy and inference_graph is not None
    use_content = "content" in strategy
    _with_csc(inference_graph if use_graph else None)
    index = SeedIndex(seed_store, features) if use_content else None

    pool = sorted(set(features.items) | set(seed_store.items))
    items, vecs, prov = [], [], []
    for it in pool:
        if it in seed_store:
            items.append(it)
            vecs.append(seed_store[it])
            prov.append(GNN_SEED)
            continue
        vec = populate_by_graph(inference_graph, seed_store, it) if use_graph else None
        if vec is not None:
            items.append(it)
            vecs.append(vec)
            prov.append(GRAPH_POPULATED)
        elif use_content:
            items.append(it)
            vecs.append(populate_by_content(it, features, index, min_seeds))
            prov.append(CONTENT_POPULATED)
    return EmbeddingStore(items, np.array(vecs).reshape(len(items), seed_store.dim), prov)


class TailEmbeddingPopulator(TransformerMixin, BaseEstimator):
    """Fill embeddings for items without a trained vector.

    ``fit(seeds, features, inference_graph=None)`` resolves the whole pool;
    ``transform(items)`` returns the resolved vectors.
    """

    def __init__(self, strategy="content+graph", min_seeds=3):
        self.strategy = strategy
        self.min_seeds = min_seeds

    def fit(self, seeds, features, inference_graph=None):
        if self.min_seeds < 1:
            raise ConfigError("min_seeds must be >= 1")
        self.store_ = resolve_all(seeds, inference_graph, features, self.min_seeds, self.strategy)
        return self

    def transform(self, items) -> np.ndarray:
        check_is_fitted(self, "store_")
        return np.array([self.store_[it] for it in items])
