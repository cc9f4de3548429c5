"""Exact cosine retrieval and offline metrics: link AUC, unique recall, tail recall."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from ._validation import check_fraction
from .exceptions import InsufficientDataError
from .graph import ItemGraph
from .sampler import select_hard_negatives
from .store import EmbeddingStore

TAIL_FRACTION = 0.9
MIN_HOLDOUT_EDGES = 10


@dataclass
class RetrievalResult:
    """Ranked neighbors per trigger; ``queries`` also lists triggers that were skipped."""

    k: int
    lists: dict  # trigger -> [(item, score), ...]
    queries: list = field(default_factory=list)
    skipped: int = 0

    def top(self, trigger) -> list:
        return [it for it, _ in self.lists.get(trigger, [])]

    def to_tsv(self) -> str:
        lines = []
        for q in sorted(self.lists):
            for rank, (it, s) in enumerate(self.lists[q], start=1):
                lines.append(f"{q}\t{rank}\t{it}\t{s!r}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_tsv(cls, text: str, k: int | None = None) -> "RetrievalResult":
        lists = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            q, rank, it, s = line.split("\t")
            lists.setdefault(q, []).append((int(rank), it, float(s)))
        out = {q: [(it, s) for _, it, s in sorted(v)] for q, v in lists.items()}
        if k is None:
            k = max((len(v) for v in out.values()), default=0)
        out = {q: v[:k] for q, v in out.items()}
        return cls(k, out, sorted(out))

    @classmethod
    def from_mapping(cls, mapping: dict, k: int, queries=None) -> "RetrievalResult":
        lists = {q: list(v)[:k] for q, v in mapping.items()}
        return cls(k, lists, list(queries) if queries is not None else sorted(lists))


def _normalized(vectors):
    norms = np.linalg.norm(vectors, axis=1)
    out = vectors / np.where(norms > 0, norms, 1.0)[:, None]
    out[norms == 0] = 0.0
    return out


def knn(store: EmbeddingStore, queries, k: int, chunk: int = 512) -> RetrievalResult:
    """Exact top-k by cosine over the whole store, self excluded, ties by item id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    queries = list(queries)
    present = [q for q in queries if q in store]
    normed = _normalized(store.vectors)
    id_rank = np.empty(len(store), dtype=np.int64)
    id_rank[np.argsort(np.array(store.items, dtype=object), kind="stable")] = np.arange(len(store))
    lists = {}
    for start in range(0, len(present), chunk):
        qs = present[start: start + chunk]
        qi = np.array([store.index[q] for q in qs])
        scores = np.clip(normed[qi] @ normed.T, -1.0, 1.0)
        scores[np.arange(len(qs)), qi] = -np.inf
        kk = min(k, len(store) - 1)
        for r, q in enumerate(qs):
            row = scores[r]
            if kk <= 0:
                lists[q] = []
                continue
            # Exact with ties: take everything scoring at least the k-th best value.
            kth = np.partition(row, len(row) - kk)[len(row) - kk]
            cand = np.flatnonzero(row >= kth)
            cand = cand[np.lexsort((id_rank[cand], -row[cand]))][:kk]
            lists[q] = [(store.items[j], float(row[j])) for j in cand]
    return RetrievalResult(k, lists, queries, len(queries) - len(present))


def split_links(g: ItemGraph, holdout_frac: float = 0.05, seed: int = 0):
    """Uniform edge holdout of floor(frac * E) edges; every node stays in the train graph."""
    check_fraction(holdout_frac, "holdout_frac", open_low=False)
    n_hold = math.floor(holdout_frac * g.n_edges)
    rng = np.random.default_rng(seed)
    hold = np.zeros(g.n_edges, dtype=bool)
    hold[rng.choice(g.n_edges, size=n_hold, replace=False)] = True
    train = g.without_edges(hold)
    holdout = [(g.items[s], g.items[d]) for s, d in zip(g.src[hold], g.indices[hold])]
    return train, holdout


def auc_from_scores(pos, neg) -> float:
    """P(positive outranks negative), ties counted as one half."""
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    if len(pos) == 0 or len(neg) == 0:
        raise InsufficientDataError("AUC needs positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    return float((ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2) / (len(pos) * len(neg)))


def _scorable(store, holdout):
    edges = [(s, t) for s, t in holdout if s in store and t in store]
    if len(edges) < MIN_HOLDOUT_EDGES:
        raise InsufficientDataError(f"need at least {MIN_HOLDOUT_EDGES} holdout edges, got {len(edges)}")
    return edges


def holdout_negatives(store: EmbeddingStore, holdout, known_edges=(), batch_size: int = 256,
                      n_hard: int = 1) -> list:
    """In-batch hard negative pairs (s, t') for held-out edges, chosen by ``store``.

    For each edge the negatives are the highest-scoring other holdout targets of the
    same evaluation batch, skipping pairs listed in ``known_edges``.
    """
    edges = _scorable(store, holdout)
    known = set(known_edges)
    normed = _normalized(store.vectors)
    items = store.index
    out = []
    for start in range(0, len(edges), batch_size):
        chunk = edges[start: start + batch_size]
        s_idx = np.array([items[s] for s, _ in chunk])
        t_idx = np.array([items[t] for _, t in chunk])
        scores = normed[s_idx] @ normed[t_idx].T
        excl = np.array([[(s, t2) in known for _, t2 in chunk] for s, _ in chunk], dtype=bool)
        hard = select_hard_negatives(scores, n_hard, s_idx, t_idx, excl)
        for (s, _), row in zip(chunk, hard):
            out.extend((s, store.items[j]) for j in row if j >= 0)
    return out


def _pair_scores(store, pairs):
    if not pairs:
        return np.zeros(0)
    normed = _normalized(store.vectors)
    a = np.array([store.index[s] for s, _ in pairs])
    b = np.array([store.index[t] for _, t in pairs])
    return np.einsum("ij,ij->i", normed[a], normed[b])


def auc_link_prediction(store: EmbeddingStore, holdout, known_edges=(), batch_size: int = 256,
                        n_hard: int = 1, negatives=None, return_scores: bool = False):
    """Link-prediction AUC of held-out edges against in-batch hard negatives.

    Positives score cos(s, t). Negatives are ``negatives`` when given (pairs chosen
    by another embedding, e.g. to score a baseline on the same pairs), otherwise
    ``holdout_negatives`` selected by ``store`` itself.
    """
    edges = _scorable(store, holdout)
    if negatives is None:
        negatives = holdout_negatives(store, edges, known_edges, batch_size, n_hard)
    negatives = [(s, t) for s, t in negatives if s in store and t in store]
    pos, neg = _pair_scores(store, edges), _pair_scores(store, negatives)
    auc = auc_from_scores(pos, neg)
    if return_scores:
        return auc, pos.tolist(), neg.tolist()
    return auc


@dataclass(frozen=True)
class TailSet:
    items: frozenset
    threshold: int  # largest click count inside the tail

    def __contains__(self, item):
        return item in self.items

    def __len__(self):
        return len(self.items)


def compute_tail_set(counts: dict, fraction: float = TAIL_FRACTION) -> TailSet:
    """Bottom ``fraction`` of items by click count (ties by ascending id)."""
    ranked = sorted(counts.items(), key=lambda kv: (kv[1], kv[0]))
    size = math.ceil(Fraction(str(fraction)) * len(ranked))
    tail = ranked[:size]
    return TailSet(frozenset(it for it, _ in tail), max((c for _, c in tail), default=0))


@dataclass
class RecallReport:
    unique_recall: float
    tail_unique_recall: float
    plain_recall: float
    pairs: int
    tail_pairs: int
    hits: int
    tail_hits: int
    plain_hits: int


def unique_recall(lightsage: RetrievalResult, baselines, future_pairs, tail: TailSet) -> RecallReport:
    """Recall of future (trigger, clicked) pairs counted only where no baseline also retrieves.

    The denominator is every future pair whose trigger was queried.
    """
    queried = set(lightsage.queries) | set(lightsage.lists)
    own = {q: set(lightsage.top(q)) for q in queried}
    others = [{q: set(b.top(q)) for q in queried} for b in baselines]
    pairs = tail_pairs = hits = tail_hits = plain = 0
    for b, a in future_pairs:
        if b not in queried:
            continue
        pairs += 1
        is_tail = a in tail
        tail_pairs += is_tail
        if a in own[b]:
            plain += 1
            if not any(a in o[b] for o in others):
                hits += 1
                tail_hits += is_tail
    if pairs == 0:
        raise InsufficientDataError("no future pairs with a queried trigger")
    return RecallReport(
        unique_recall=hits / pairs,
        tail_unique_recall=tail_hits / tail_pairs if tail_pairs else 0.0,
        plain_recall=plain / pairs,
        pairs=pairs,
        tail_pairs=tail_pairs,
        hits=hits,
        tail_hits=tail_hits,
        plain_hits=plain,
    )


def cluster_purity(result: RetrievalResult, clusters: dict, k: int = 10) -> float:
    """Mean share of each trigger's top-k that shares its planted cluster."""
    vals = []
    for q, lst in result.lists.items():
        top = [it for it, _ in lst[:k]]
        if top:
            vals.append(sum(clusters.get(it) == clusters.get(q) for it in top) / len(top))
    return float(np.mean(vals)) if vals else 0.0


@dataclass
class EvalReport:
    auc: float | None = None
    unique_recall: float | None = None
    tail_unique_recall: float | None = None
    plain_recall: float | None = None
    counts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"
