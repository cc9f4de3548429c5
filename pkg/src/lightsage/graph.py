"""Directed, weighted item graph built from PDP click pairs and CF links."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError, EmptyGraphError
from .ingest import ClickEvent

logger = logging.getLogger(__name__)

PROVENANCES = ("direct", "swing", "search_cf")


class WeightedEdge(NamedTuple):
    src: str
    dst: str
    weight: float
    provenance: str


@dataclass(frozen=True)
class EdgeAttr:
    weight: float
    components: dict

    @property
    def provenance(self) -> str:
        """Highest-priority provenance with a non-zero component."""
        for name in PROVENANCES:
            if self.components.get(name, 0.0) > 0:
                return name
        raise ValueError("edge without provenance")


@dataclass(frozen=True)
class GraphBuildConfig:
    min_edge_users: int = 2
    mode: str = "training"
    inference_divisor: float = 2.0

    def __post_init__(self):
        if self.min_edge_users < 1:
            raise ConfigError("min_edge_users must be >= 1")
        if self.mode not in ("training", "inference"):
            raise ConfigError(f"unknown graph mode {self.mode!r}")
        if self.inference_divisor < 1:
            raise ConfigError("inference_divisor must be >= 1")

    @property
    def threshold(self) -> int:
        if self.mode == "training":
            return self.min_edge_users
        return max(1, int(self.min_edge_users / self.inference_divisor))


class ItemGraph:
    """Immutable CSR item graph.

    Nodes are item ids sorted ascending; adjacency rows are sorted by destination
    index. ``components[:, j]`` holds the weight contributed by ``PROVENANCES[j]``.
    """

    def __init__(self, items, indptr, indices, components):
        self.items = list(items)
        self.index = {it: i for i, it in enumerate(self.items)}
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.components = np.asarray(components, dtype=float).reshape(len(self.indices), len(PROVENANCES))
        self.weights = self.components.sum(axis=1)
        n = len(self.items)
        self.src = np.repeat(np.arange(n), np.diff(self.indptr))
        self.out_degree = np.diff(self.indptr)
        self.in_degree = np.bincount(self.indices, minlength=n)
        self.out_weight = np.bincount(self.src, weights=self.weights, minlength=n)
        self.in_weight = np.bincount(self.indices, weights=self.weights, minlength=n)
        self._check()

    def _check(self):
        if len(self.index) != len(self.items):
            raise ValueError("duplicate node ids")
        if len(self.indices) and np.any(self.src == self.indices):
            raise ValueError("self-loop in item graph")
        if np.any(self.weights <= 0) or np.any(self.components < 0):
            raise ValueError("edge weights must be positive")

    @classmethod
    def from_edges(cls, items, src, dst, components):
        """Build from index arrays; duplicate (src, dst) pairs are summed."""
        n = len(items)
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        components = np.asarray(components, dtype=float).reshape(len(src), len(PROVENANCES))
        key = src * max(n, 1) + dst
        uniq, inv = np.unique(key, return_inverse=True)
        merged = np.zeros((len(uniq), len(PROVENANCES)))
        np.add.at(merged, inv, components)
        s, d = uniq // max(n, 1), uniq % max(n, 1)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(s, minlength=n), out=indptr[1:])
        return cls(items, indptr, d, merged)

    @property
    def n_nodes(self) -> int:
        return len(self.items)

    @property
    def n_edges(self) -> int:
        return len(self.indices)

    @property
    def degree(self) -> np.ndarray:
        """Weighted in-degree plus out-degree."""
        return self.in_weight + self.out_weight

    def out_neighbors(self, i: int):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    def edge(self, src_item, dst_item) -> EdgeAttr | None:
        i, j = self.index.get(src_item), self.index.get(dst_item)
        if i is None or j is None:
            return None
        lo, hi = self.indptr[i], self.indptr[i + 1]
        pos = lo + np.searchsorted(self.indices[lo:hi], j)
        if pos < hi and self.indices[pos] == j:
            comps = dict(zip(PROVENANCES, self.components[pos].tolist()))
            return EdgeAttr(float(self.weights[pos]), comps)
        return None

    def to_csr(self) -> sp.csr_matrix:
        n = self.n_nodes
        return sp.csr_matrix((self.weights, self.indices, self.indptr), shape=(n, n))

    def edge_keys(self) -> set:
        return {(self.items[s], self.items[d]) for s, d in zip(self.src, self.indices)}

    def without_edges(self, mask) -> "ItemGraph":
        """Copy with edges where ``mask`` is True removed; all nodes kept."""
        keep = ~np.asarray(mask, dtype=bool)
        return ItemGraph.from_edges(self.items, self.src[keep], self.indices[keep], self.components[keep])

    def iter_edges(self):
        for s, d, w, c in zip(self.src, self.indices, self.weights, self.components):
            yield self.items[s], self.items[d], float(w), c

    def __eq__(self, other):
        return (
            isinstance(other, ItemGraph)
            and self.items == other.items
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.components, other.components)
        )

    def to_tsv(self) -> str:
        lines = []
        connected = (self.out_degree + self.in_degree) > 0
        for i, item in enumerate(self.items):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            for e in range(lo, hi):
                c = self.components[e].tolist()
                lines.append(
                    f"{item}\t{self.items[self.indices[e]]}\t{float(self.weights[e])!r}\t"
                    f"{c[0]!r}\t{c[1]!r}\t{c[2]!r}"
                )
            if not connected[i]:
                # Isolated node: empty destination, zero weights.
                lines.append(f"{item}\t\t0.0\t0.0\t0.0\t0.0")
        return "\n".join(lines) + ("\n" if lines else "")

    def write(self, path):
        from .ingest import atomic_write_text

        atomic_write_text(path, self.to_tsv())

    @classmethod
    def from_tsv(cls, text: str) -> "ItemGraph":
        nodes, rows = set(), []
        for line in text.splitlines():
            if not line.strip():
                continue
            cols = line.split("\t")
            nodes.add(cols[0])
            if cols[1]:
                nodes.add(cols[1])
                rows.append((cols[0], cols[1], [float(x) for x in cols[3:6]]))
        items = sorted(nodes)
        index = {it: i for i, it in enumerate(items)}
        src = [index[s] for s, _, _ in rows]
        dst = [index[d] for _, d, _ in rows]
        comps = np.array([c for _, _, c in rows], dtype=float).reshape(len(rows), 3)
        return cls.from_edges(items, src, dst, comps)

    @classmethod
    def read(cls, path) -> "ItemGraph":
        with open(path, encoding="utf-8") as fh:
            return cls.from_tsv(fh.read())


def build_direct_edges(events: Iterable[ClickEvent], cfg: GraphBuildConfig) -> dict:
    """Map (trigger, clicked) to the number of distinct users with that PDP click."""
    users = defaultdict(set)
    for e in events:
        if e.trigger_item is None or e.trigger_item == e.clicked_item:
            continue
        users[(e.trigger_item, e.clicked_item)].add(e.user_id)
    thr = cfg.threshold
    return {pair: len(us) for pair, us in users.items() if len(us) >= thr}


def assemble_graph(direct: dict, cf_edges: Sequence[WeightedEdge] = (), features=None) -> ItemGraph:
    """Merge direct and CF edges into one graph.

    Edges touching an item without a feature row are dropped when ``features`` is
    given; the count is stored on the result as ``dropped_edges``.
    """
    rows = [(b, a, float(w), "direct") for (b, a), w in direct.items()]
    rows += [(e.src, e.dst, float(e.weight), e.provenance) for e in cf_edges]
    kept, dropped = [], 0
    for b, a, w, prov in rows:
        if b == a or w <= 0:
            continue
        if features is not None and (b not in features or a not in features):
            dropped += 1
            continue
        kept.append((b, a, w, prov))
    if dropped:
        logger.warning("assemble_graph: dropped %d edges with featureless endpoints", dropped)
    if not kept:
        raise EmptyGraphError("assembled item graph has no edges")
    items = sorted({b for b, *_ in kept} | {a for _, a, *_ in kept})
    index = {it: i for i, it in enumerate(items)}
    comps = np.zeros((len(kept), len(PROVENANCES)))
    col = {p: j for j, p in enumerate(PROVENANCES)}
    for r, (_, _, w, prov) in enumerate(kept):
        comps[r, col[prov]] = w
    g = ItemGraph.from_edges(
        items, [index[b] for b, *_ in kept], [index[a] for _, a, *_ in kept], comps
    )
    g.dropped_edges = dropped
    return g


def graph_stats(g: ItemGraph) -> dict:
    nonzero = g.components > 0
    hist = Counter(g.out_degree.tolist())
    return {
        "nodes": g.n_nodes,
        "edges": g.n_edges,
        "provenance_edges": {p: int(nonzero[:, j].sum()) for j, p in enumerate(PROVENANCES)},
        "provenance_weight": {p: float(g.components[:, j].sum()) for j, p in enumerate(PROVENANCES)},
        "total_weight": float(g.weights.sum()),
        "out_degree_histogram": {str(k): hist[k] for k in sorted(hist)},
    }
