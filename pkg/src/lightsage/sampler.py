"""Random-walk neighborhoods, positives and negatives for training batches."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError
from .graph import ItemGraph

NEGATIVE_EXPONENT = 0.75
MAX_NEGATIVE_RETRIES = 100


@dataclass(frozen=True)
class NeighborhoodSpec:
    k_layers: int = 2
    walks_per_node: int = 32
    walk_length: int = 2
    top_t: int = 10

    def __post_init__(self):
        if min(self.k_layers, self.walks_per_node, self.walk_length, self.top_t) < 1:
            raise ConfigError("neighborhood parameters must be positive")
        if self.top_t > self.walks_per_node * self.walk_length:
            warnings.warn("top_t exceeds the number of walk steps", stacklevel=2)


@dataclass
class SampledNeighborhood:
    """Per-layer (node index, importance weight) lists of one center node."""

    layers: list = field(default_factory=list)  # list of (indices, weights)

    def layer(self, ell: int):
        return self.layers[ell - 1]


class NeighborhoodTable:
    """Sampled neighborhoods for a set of centers, stored as per-layer CSR rows.

    Row order follows ``centers``; entries within a row are sorted by node index.
    """

    def __init__(self, n_nodes, centers, layers):
        self.n_nodes = n_nodes
        self.centers = np.asarray(centers, dtype=np.int64)
        self.layers = layers  # list of (indptr, indices, weights)
        self.row_of = {int(c): r for r, c in enumerate(self.centers)}

    @property
    def k_layers(self):
        return len(self.layers)

    def __contains__(self, node):
        return int(node) in self.row_of

    def get(self, node) -> SampledNeighborhood:
        r = self.row_of[int(node)]
        out = []
        for indptr, indices, weights in self.layers:
            lo, hi = indptr[r], indptr[r + 1]
            out.append((indices[lo:hi].copy(), weights[lo:hi].copy()))
        return SampledNeighborhood(out)

    def matrix(self, ell: int = 1) -> sp.csr_matrix:
        """n_nodes x n_nodes aggregation matrix; rows of non-centers are empty."""
        indptr, indices, weights = self.layers[ell - 1]
        rows = np.repeat(self.centers, np.diff(indptr))
        m = sp.csr_matrix((weights, (rows, indices)), shape=(self.n_nodes, self.n_nodes))
        m.sort_indices()
        return m


def _walk_step(g: ItemGraph, pos, rng):
    """Advance walkers one weighted out-edge step; -1 marks a terminated walker."""
    nxt = np.full(len(pos), -1, dtype=np.int64)
    alive = pos >= 0
    if not alive.any():
        return nxt
    p = pos[alive]
    lo, hi = g.indptr[p], g.indptr[p + 1]
    has_out = hi > lo
    cum = g._cum_weights if hasattr(g, "_cum_weights") else None
    if cum is None:
        cum = np.concatenate([[0.0], np.cumsum(g.weights)])
        g._cum_weights = cum
    u = rng.random(len(p))
    base, total = cum[lo], cum[hi] - cum[lo]
    target = base + u * total
    j = np.searchsorted(cum, target, side="right") - 1
    j = np.clip(j, lo, np.maximum(hi - 1, lo))
    step = np.where(has_out, g.indices[np.minimum(j, max(len(g.indices) - 1, 0))], -1)
    nxt[alive] = step
    return nxt


def sample_neighborhoods(g: ItemGraph, nodes, spec: NeighborhoodSpec, rng) -> NeighborhoodTable:
    """Random-walk neighborhoods for many centers at once.

    Each center runs ``walks_per_node`` walks along out-edges, choosing edges in
    proportion to weight. Layer l holds nodes reached at step l that are neither the
    center nor in an earlier layer, ranked by visit count at that step (ties by node
    index), truncated to ``top_t`` and normalized to sum to one.
    """
    centers = np.asarray(nodes, dtype=np.int64)
    n = g.n_nodes
    n_c = len(centers)
    origin_row = np.repeat(np.arange(n_c), spec.walks_per_node)
    pos = np.repeat(centers, spec.walks_per_node)
    seen_keys = np.empty(0, dtype=np.int64)
    layers = []
    for ell in range(1, spec.k_layers + 1):
        if ell <= spec.walk_length:
            pos = _walk_step(g, pos, rng)
        else:
            pos = np.full_like(pos, -1)
        ok = (pos >= 0) & (pos != centers[origin_row])
        keys = origin_row[ok] * n + pos[ok]
        if len(seen_keys):
            keys = keys[~np.isin(keys, seen_keys)]
        uniq, counts = np.unique(keys, return_counts=True)
        rows, cols = uniq // n, uniq % n
        # Top-t per row by count, ties by ascending node index.
        order = np.lexsort((cols, -counts, rows))
        rows, cols, counts = rows[order], cols[order], counts[order]
        starts = np.searchsorted(rows, rows, side="left")
        rank = np.arange(len(rows)) - starts
        keep = rank < spec.top_t
        rows, cols, counts = rows[keep], cols[keep], counts[keep]
        order = np.lexsort((cols, rows))
        rows, cols, counts = rows[order], cols[order], counts[order].astype(float)
        totals = np.bincount(rows, weights=counts, minlength=n_c)
        weights = counts / totals[rows] if len(rows) else counts
        indptr = np.zeros(n_c + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_c), out=indptr[1:])
        layers.append((indptr, cols, weights))
        seen_keys = np.union1d(seen_keys, rows * n + cols)
    return NeighborhoodTable(n, centers, layers)


def sample_neighborhood(g: ItemGraph, node: int, spec: NeighborhoodSpec, rng) -> SampledNeighborhood:
    return sample_neighborhoods(g, [node], spec, rng).get(node)


def sample_positives(g: ItemGraph, targets, rng, uniform: bool = False) -> np.ndarray:
    """One out-neighbor per target (-1 where the target has no out-edges)."""
    targets = np.asarray(targets, dtype=np.int64)
    if not uniform:
        return _walk_step(g, targets, rng)
    out = np.full(len(targets), -1, dtype=np.int64)
    deg = g.out_degree[targets]
    u = rng.random(len(targets))
    has = deg > 0
    pick = g.indptr[targets[has]] + np.minimum((u[has] * deg[has]).astype(np.int64), deg[has] - 1)
    out[has] = g.indices[pick]
    return out


def sample_positive(g: ItemGraph, target: int, rng, uniform: bool = False):
    """Weight-proportional out-neighbor of ``target``; None signals exclusion."""
    p = int(sample_positives(g, [target], rng, uniform=uniform)[0])
    return None if p < 0 else p


def negative_distribution(degree) -> np.ndarray:
    p = np.asarray(degree, dtype=float) ** NEGATIVE_EXPONENT
    return p / p.sum()


def sample_random_negatives(degree, count: int, rng, exclusions=()) -> np.ndarray:
    """Draws from P(v) proportional to degree(v)**0.75, avoiding ``exclusions``.

    Colliding draws are redrawn up to 100 times; afterwards they are kept.
    """
    probs = negative_distribution(degree)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    out = np.searchsorted(cdf, rng.random(count), side="right")
    excl = np.fromiter(exclusions, dtype=np.int64) if exclusions is not None else np.empty(0, np.int64)
    if len(excl) == 0:
        return out
    excl = np.unique(excl)
    if np.isin(np.arange(len(probs)), excl).all():
        return out
    for _ in range(MAX_NEGATIVE_RETRIES):
        bad = np.isin(out, excl)
        if not bad.any():
            return out
        out[bad] = np.searchsorted(cdf, rng.random(int(bad.sum())), side="right")
    # Leftover collisions after the retry budget are accepted.
    return out


def select_hard_negatives(scores, n_hard: int, targets, positives, exclusions=None) -> np.ndarray:
    """Highest-scoring in-batch positives per target row.

    ``scores[i, j]`` is the score of target ``i`` against the positive of row ``j``.
    Row ``i`` never receives its own positive or its own target node. ``exclusions``
    bans further candidates, either as a boolean (rows, cols) mask or as one
    collection of node ids per row. A node repeated across columns counts once with
    its best score; ties break by ascending node id. Returns a (rows, n_hard) array
    padded with -1 when too few candidates remain.
    """
    scores = np.asarray(scores, dtype=float)
    targets = np.asarray(targets, dtype=np.int64)
    positives = np.asarray(positives, dtype=np.int64)
    b = len(targets)
    n_hard = max(int(n_hard), 0)
    out = np.full((b, n_hard), -1, dtype=np.int64)
    if n_hard == 0 or b == 0:
        return out
    cand, inv = np.unique(positives, return_inverse=True)
    best = np.full((b, len(cand)), -np.inf)
    for j in range(scores.shape[1]):
        np.maximum(best[:, inv[j]], scores[:, j], out=best[:, inv[j]])
    ban = (cand[None, :] == targets[:, None]) | (cand[None, :] == positives[:, None])
    if exclusions is not None:
        if isinstance(exclusions, np.ndarray) and exclusions.dtype == bool:
            for j in range(exclusions.shape[1]):
                ban[:, inv[j]] |= exclusions[:, j]
        else:
            for i, excl in enumerate(exclusions):
                ban[i] |= np.isin(cand, np.fromiter(excl, dtype=np.int64))
    best[ban] = -np.inf
    node_key = np.broadcast_to(cand, best.shape)
    order = np.lexsort((node_key, -best), axis=1)
    for i in range(b):
        row = order[i]
        row = row[np.isfinite(best[i, row])][:n_hard]
        out[i, : len(row)] = cand[row]
    return out
