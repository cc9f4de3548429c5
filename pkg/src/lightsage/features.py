"""Per-item content features, vocabularies and content matching keys."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

UNKNOWN = 0
KINDS = ("sparse", "dense", "pretrained")
_DEFAULT_KINDS = {
    "category": "sparse",
    "brand": "sparse",
    "shop": "sparse",
    "price": "dense",
    "rating": "dense",
    "pretrained": "pretrained",
}


class Vocabulary:
    """Token to contiguous index map; index 0 is reserved for unknown tokens."""

    def __init__(self, tokens=()):
        self._tokens = []
        self._index = {}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self._index.get(token)
        if idx is None:
            self._tokens.append(token)
            idx = self._index[token] = len(self._tokens)
        return idx

    def __getitem__(self, token: str) -> int:
        return self._index.get(token, UNKNOWN)

    def __len__(self):
        # Includes the unknown slot.
        return len(self._tokens) + 1

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self):
        return list(self._tokens)

    def to_list(self):
        return list(self._tokens)

    @classmethod
    def from_list(cls, tokens):
        return cls(tokens)


def leaf_category(path: str) -> str:
    return path.rsplit(">", 1)[-1].strip()


def price_band(price: float) -> int:
    """Half-decade band of log10(price); prices below 0.01 are clamped."""
    return math.floor(math.log10(max(price, 0.01)) * 2)


@dataclass
class NodeFeatureStore:
    items: list
    sparse_fields: list
    dense_fields: list
    sparse: dict  # field -> int array of vocab indices
    vocabs: dict  # field -> Vocabulary
    dense_raw: np.ndarray  # (n, n_dense), price before log1p
    dense: np.ndarray  # standardized
    dense_mean: np.ndarray
    dense_std: np.ndarray
    pretrained: np.ndarray  # (n, p); zero rows where missing
    has_pretrained: np.ndarray
    raw_sparse: dict = field(default_factory=dict)  # field -> list of raw tokens
    skipped: int = 0
    index: dict = field(init=False)

    def __post_init__(self):
        self.index = {item: i for i, item in enumerate(self.items)}
        if len(self.index) != len(self.items):
            raise ConfigError("duplicate item ids in feature store")

    def __len__(self):
        return len(self.items)

    def __contains__(self, item):
        return item in self.index

    @property
    def pretrained_dim(self) -> int:
        return self.pretrained.shape[1]

    def rows(self, items) -> np.ndarray:
        return np.array([self.index[i] for i in items], dtype=np.int64)

    def lookup(self, field_name: str, token: str) -> int:
        return self.vocabs[field_name][token]

    def price(self, item) -> float:
        if "price" not in self.dense_fields:
            return 0.0
        return float(self.dense_raw[self.index[item], self.dense_fields.index("price")])

    def content_key(self, item, level: int) -> tuple:
        """Matching key for content-based seed lookup.

        level 0 is (leaf category, brand, price band), level 1 drops the price band,
        level 2 keeps the leaf category only.
        """
        if level not in (0, 1, 2):
            raise ValueError(f"level must be 0, 1 or 2, got {level}")
        row = self.index[item]
        cat = self.raw_sparse.get("category", [""] * len(self))[row]
        if level == 2:
            return (cat,)
        brand = self.raw_sparse.get("brand", [""] * len(self))[row]
        if level == 1:
            return (cat, brand)
        return (cat, brand, price_band(self.price(item)))


def _parse_header(cols):
    names, kinds = [], []
    for col in cols[1:]:
        name, _, kind = col.partition(":")
        kind = kind or _DEFAULT_KINDS.get(name)
        if kind not in KINDS:
            raise ConfigError(f"feature column {col!r} has no known kind")
        names.append(name)
        kinds.append(kind)
    if kinds.count("pretrained") > 1:
        raise ConfigError("at most one pretrained column is supported")
    return names, kinds


def load_features(path) -> NodeFeatureStore:
    """Load the item feature TSV.

    The header names each column as ``name:kind``; ``item`` comes first. Rows with a
    non-numeric dense value are skipped.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ConfigError(f"{path}: empty feature file")
    names, kinds = _parse_header(lines[0].split("\t"))
    return features_from_rows(names, kinds, [ln.split("\t") for ln in lines[1:]], source=str(path))


def features_from_rows(names, kinds, rows, source="<rows>") -> NodeFeatureStore:
    sparse_fields = [n for n, k in zip(names, kinds) if k == "sparse"]
    dense_fields = [n for n, k in zip(names, kinds) if k == "dense"]
    pre_col = kinds.index("pretrained") + 1 if "pretrained" in kinds else None

    items, raw_sparse, dense_vals, pre_vals = [], {f: [] for f in sparse_fields}, [], []
    pre_dim = None
    skipped = 0
    for cols in rows:
        cols = list(cols) + [""] * (len(names) + 1 - len(cols))
        try:
            dense_row = [float(cols[1 + names.index(f)]) for f in dense_fields]
            if not all(math.isfinite(v) for v in dense_row):
                raise ValueError("non-finite")
        except ValueError:
            skipped += 1
            continue
        vec = None
        if pre_col is not None and cols[pre_col].strip():
            vec = [float(x) for x in cols[pre_col].split(",")]
            if pre_dim is None:
                pre_dim = len(vec)
            elif len(vec) != pre_dim:
                raise ConfigError(f"{source}: pretrained dimension {len(vec)} != {pre_dim}")
        items.append(cols[0])
        for f in sparse_fields:
            tok = cols[1 + names.index(f)]
            raw_sparse[f].append(leaf_category(tok) if f == "category" else tok)
        dense_vals.append(dense_row)
        pre_vals.append(vec)
    if skipped:
        logger.warning("%s: skipped %d rows with non-numeric dense values", source, skipped)

    n = len(items)
    vocabs, sparse = {}, {}
    for f in sparse_fields:
        vocab = Vocabulary()
        sparse[f] = np.array([vocab.add(tok) for tok in raw_sparse[f]], dtype=np.int64)
        vocabs[f] = vocab

    dense_raw = np.asarray(dense_vals, dtype=float).reshape(n, len(dense_fields))
    dense = dense_raw.copy()
    if "price" in dense_fields:
        j = dense_fields.index("price")
        dense[:, j] = np.log1p(np.maximum(dense[:, j], 0.0))
    mean = dense.mean(axis=0) if n else np.zeros(len(dense_fields))
    std = dense.std(axis=0) if n else np.ones(len(dense_fields))
    std = np.where(std > 0, std, 1.0)
    dense = (dense - mean) / std

    pre_dim = pre_dim or 0
    pretrained = np.zeros((n, pre_dim))
    has_pre = np.zeros(n, dtype=bool)
    for i, vec in enumerate(pre_vals):
        if vec is not None:
            pretrained[i] = vec
            has_pre[i] = True

    store = NodeFeatureStore(
        items=items,
        sparse_fields=sparse_fields,
        dense_fields=dense_fields,
        sparse=sparse,
        vocabs=vocabs,
        dense_raw=dense_raw,
        dense=dense,
        dense_mean=mean,
        dense_std=std,
        pretrained=pretrained,
        has_pretrained=has_pre,
        raw_sparse=raw_sparse,
        skipped=skipped,
    )
    return store
