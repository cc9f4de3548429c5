"""Item embedding store and its TSV file format."""

from __future__ import annotations

import base64
from collections import Counter

import numpy as np

from .exceptions import ConfigError
from .ingest import atomic_write_text

GNN_SEED = "gnn-seed"
GRAPH_POPULATED = "graph-populated"
CONTENT_POPULATED = "content-populated"
PROVENANCES = (GNN_SEED, GRAPH_POPULATED, CONTENT_POPULATED)


class EmbeddingStore:
    """One vector and one provenance tag per item."""

    def __init__(self, items, vectors, provenance):
        self.items = list(items)
        self.vectors = np.asarray(vectors, dtype=float).reshape(len(self.items), -1)
        if isinstance(provenance, str):
            provenance = [provenance] * len(self.items)
        self.provenance = list(provenance)
        self.index = {it: i for i, it in enumerate(self.items)}
        if len(self.index) != len(self.items):
            raise ConfigError("duplicate items in embedding store")
        if len(self.provenance) != len(self.items):
            raise ConfigError("provenance length mismatch")
        if any(p not in PROVENANCES for p in self.provenance):
            raise ConfigError("unknown provenance tag")
        if not np.all(np.isfinite(self.vectors)):
            raise ConfigError("embedding store contains non-finite values")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.items)

    def __contains__(self, item):
        return item in self.index

    def __getitem__(self, item) -> np.ndarray:
        return self.vectors[self.index[item]]

    def provenance_of(self, item) -> str:
        return self.provenance[self.index[item]]

    def histogram(self) -> dict:
        c = Counter(self.provenance)
        return {p: c.get(p, 0) for p in PROVENANCES}

    def subset(self, keep) -> "EmbeddingStore":
        idx = [i for i, it in enumerate(self.items) if keep(it, self.provenance[i])]
        return EmbeddingStore([self.items[i] for i in idx], self.vectors[idx],
                              [self.provenance[i] for i in idx])

    def __eq__(self, other):
        return (
            isinstance(other, EmbeddingStore)
            and self.items == other.items
            and self.provenance == other.provenance
            and np.array_equal(self.vectors, other.vectors)
        )

    def to_text(self, fmt: str = "csv") -> str:
        lines = [f"{len(self)}\t{self.dim}"]
        v32 = self.vectors.astype(np.float32)
        for item, prov, row in zip(self.items, self.provenance, v32):
            if fmt == "csv":
                payload = ",".join(f"{x:.9g}" for x in row.tolist())
            elif fmt == "base64":
                payload = "b64:" + base64.b64encode(row.astype("<f4").tobytes()).decode("ascii")
            else:
                raise ValueError(f"unknown embedding format {fmt!r}")
            lines.append(f"{item}\t{prov}\t{payload}")
        return "\n".join(lines) + "\n"

    def write(self, path, fmt: str = "csv"):
        atomic_write_text(path, self.to_text(fmt))

    @classmethod
    def from_text(cls, text: str) -> "EmbeddingStore":
        lines = text.splitlines()
        count, dim = (int(x) for x in lines[0].split("\t"))
        items, prov, vecs = [], [], []
        for line in lines[1: count + 1]:
            item, p, payload = line.split("\t")
            if payload.startswith("b64:"):
                row = np.frombuffer(base64.b64decode(payload[4:]), dtype="<f4")
            else:
                row = np.array([np.float32(x) for x in payload.split(",")] if payload else [],
                               dtype=np.float32)
            if len(row) != dim:
                raise ConfigError(f"embedding row for {item} has dimension {len(row)} != {dim}")
            items.append(item)
            prov.append(p)
            vecs.append(row.astype(float))
        if len(items) != count:
            raise ConfigError(f"embedding file declares {count} rows, found {len(items)}")
        return cls(items, np.array(vecs).reshape(count, dim), prov)

    @classmethod
    def read(cls, path) -> "EmbeddingStore":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())
