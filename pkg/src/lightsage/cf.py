"""Supplementary item-to-item links from Swing and search co-clicks."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from numba import njit

from .exceptions import ConfigError
from .graph import WeightedEdge
from .ingest import SearchEvent


@dataclass(frozen=True)
class CfConfig:
    swing_alpha: float = 1.0
    top_n_per_item: int = 20
    penalty_factor: float = 0.5
    min_score: float = 0.0
    max_user_clicks: int = 100

    def __post_init__(self):
        if self.swing_alpha <= 0 or self.top_n_per_item < 1 or self.max_user_clicks < 1:
            raise ConfigError("swing_alpha, top_n_per_item and max_user_clicks must be positive")
        if not 0 < self.penalty_factor <= 1:
            raise ConfigError("penalty_factor must lie in (0, 1]")
        if self.min_score < 0:
            raise ConfigError("min_score must be non-negative")


class UserItemClicks:
    """Bipartite user/item click sets with consistent forward and inverse maps."""

    def __init__(self, user_items: Mapping[str, Iterable[str]]):
        self.user_items = {u: frozenset(items) for u, items in user_items.items() if items}
        inverse = defaultdict(set)
        for u, items in self.user_items.items():
            for it in items:
                inverse[it].add(u)
        self.item_users = {it: frozenset(us) for it, us in inverse.items()}

    @classmethod
    def from_events(cls, events) -> "UserItemClicks":
        out = defaultdict(set)
        for e in events:
            out[e.user_id].add(e.clicked_item)
        return cls(out)

    def without_user(self, user) -> "UserItemClicks":
        return UserItemClicks({u: s for u, s in self.user_items.items() if u != user})


class PairScores(dict):
    """Symmetric item-pair scores keyed by the sorted pair ``(i, j)`` with ``i < j``."""

    def score(self, i, j) -> float:
        if i == j:
            return 0.0
        return self.get((i, j) if i < j else (j, i), 0.0)

    def partners(self) -> dict:
        out = defaultdict(dict)
        for (i, j), s in self.items():
            out[i][j] = s
            out[j][i] = s
        return out


def _truncate(scores: dict, cfg: CfConfig) -> PairScores:
    kept = {p: s for p, s in scores.items() if s > 0 and s >= cfg.min_score}
    per_item = defaultdict(list)
    for (i, j), s in kept.items():
        per_item[i].append((-s, j))
        per_item[j].append((-s, i))
    # A pair survives if it is in the top-n of either endpoint.
    survive = set()
    for i, lst in per_item.items():
        lst.sort()
        for _, j in lst[: cfg.top_n_per_item]:
            survive.add((i, j) if i < j else (j, i))
    return PairScores({p: kept[p] for p in sorted(survive)})


@njit(cache=True)
def _overlap_sizes(indptr, indices, t_indptr, t_indices, present):
    """Mark every overlap size >= 2 that occurs between two users."""
    n_users = len(indptr) - 1
    cnt = np.zeros(n_users, np.int64)
    touched = np.empty(n_users, np.int64)
    for u in range(n_users):
        nt = 0
        for p in range(indptr[u], indptr[u + 1]):
            i = indices[p]
            for q in range(t_indptr[i], t_indptr[i + 1]):
                v = t_indices[q]
                if v > u:
                    if cnt[v] == 0:
                        touched[nt] = v
                        nt += 1
                    cnt[v] += 1
        for r in range(nt):
            v = touched[r]
            if cnt[v] >= 2:
                present[cnt[v]] = True
            cnt[v] = 0


@njit(cache=True)
def _swing_counts(indptr, indices, t_indptr, t_indices, slot_of, counts):
    """counts[slot_of[k], i, j] += 1 for each user pair with overlap k sharing i < j."""
    n_users = len(indptr) - 1
    n_items = len(t_indptr) - 1
    cnt = np.zeros(n_users, np.int64)
    touched = np.empty(n_users, np.int64)
    mark = np.zeros(n_items, np.bool_)
    common = np.empty(n_items, np.int64)
    for u in range(n_users):
        nt = 0
        for p in range(indptr[u], indptr[u + 1]):
            i = indices[p]
            mark[i] = True
            for q in range(t_indptr[i], t_indptr[i + 1]):
                v = t_indices[q]
                if v > u:
                    if cnt[v] == 0:
                        touched[nt] = v
                        nt += 1
                    cnt[v] += 1
        for r in range(nt):
            v = touched[r]
            k = cnt[v]
            cnt[v] = 0
            if k < 2:
                continue
            nc = 0
            for p in range(indptr[v], indptr[v + 1]):
                if mark[indices[p]]:
                    common[nc] = indices[p]
                    nc += 1
            s = slot_of[k]
            for a in range(nc):
                for b in range(a + 1, nc):
                    counts[s, common[a], common[b]] += 1
        for p in range(indptr[u], indptr[u + 1]):
            mark[indices[p]] = False


def swing_scores(clicks: UserItemClicks, cfg: CfConfig, truncate: bool = True) -> PairScores:
    """Swing similarity over the user/item click graph.

    score(i, j) sums 1 / (alpha + |I_u & I_v|) over unordered user pairs {u, v} who
    both clicked i and j. Users with more than ``max_user_clicks`` items are
    ignored. Pair counts are kept per overlap size and reduced in ascending overlap
    order, so the result does not depend on user enumeration order.
    """
    users = sorted(u for u, s in clicks.user_items.items() if len(s) <= cfg.max_user_clicks)
    items = sorted({it for u in users for it in clicks.user_items[u]})
    if len(users) < 2 or len(items) < 2:
        return PairScores()
    item_idx = {it: j for j, it in enumerate(items)}
    rows, cols = [], []
    for r, u in enumerate(users):
        for it in clicks.user_items[u]:
            rows.append(r)
            cols.append(item_idx[it])
    m = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(len(users), len(items))
    )
    m.sort_indices()
    mt = m.T.tocsr()
    mt.sort_indices()
    csr = (m.indptr.astype(np.int64), m.indices.astype(np.int64),
           mt.indptr.astype(np.int64), mt.indices.astype(np.int64))

    present = np.zeros(cfg.max_user_clicks + 1, dtype=np.bool_)
    _overlap_sizes(*csr, present)
    ks = np.flatnonzero(present)
    if len(ks) == 0:
        return PairScores()
    slot_of = np.full(len(present), -1, dtype=np.int64)
    slot_of[ks] = np.arange(len(ks))
    n_items = len(items)
    counts = np.zeros((len(ks), n_items, n_items), dtype=np.int32)
    _swing_counts(*csr, slot_of, counts)

    total = np.zeros((n_items, n_items))
    for s, k in enumerate(ks.tolist()):
        total += counts[s] / (cfg.swing_alpha + k)
    del counts
    ii, jj = np.nonzero(total)
    raw = {(items[i], items[j]): float(total[i, j]) for i, j in zip(ii, jj)}
    if not truncate:
        return PairScores(raw)
    return _truncate(raw, cfg)


def search_cf_scores(events: Iterable[SearchEvent], cfg: CfConfig | None = None) -> PairScores:
    """Count distinct (user, query) groups in which both items were clicked."""
    groups = defaultdict(set)
    for e in events:
        groups[(e.user_id, e.query)].add(e.clicked_item)
    scores = defaultdict(float)
    for items in groups.values():
        for i, j in combinations(sorted(items), 2):
            scores[(i, j)] += 1.0
    if cfg is None:
        return PairScores(sorted(scores.items()))
    return _truncate(dict(scores), cfg)


def scores_to_edges(scores: Mapping, cfg: CfConfig, provenance: str) -> list[WeightedEdge]:
    """Directed edges in both directions with click-scale weight ``penalty * score``."""
    floor = cfg.penalty_factor * cfg.min_score
    edges = []
    for (i, j), s in sorted(scores.items()):
        if s <= 0 or s < cfg.min_score:
            continue
        w = max(cfg.penalty_factor * s, floor)
        edges.append(WeightedEdge(i, j, w, provenance))
        edges.append(WeightedEdge(j, i, w, provenance))
    return edges


def swing_retrieval(scores: PairScores, queries, k: int) -> dict:
    """Top-k Swing partners per query (ties by ascending item id)."""
    partners = scores.partners()
    out = {}
    for q in queries:
        cand = sorted(partners.get(q, {}).items(), key=lambda t: (-t[1], t[0]))[:k]
        out[q] = cand
    return out
