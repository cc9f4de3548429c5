"""LightSAGE network: feature projection, linear GNN blocks, cosine softmax loss.

All tensors are numpy float64. Gradients are derived by hand; ``backward`` is the
exact reverse of ``forward`` and ``loss``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError, TrainingDivergedError

logger = logging.getLogger(__name__)

ITEM_FIELD = "item"


@dataclass(frozen=True)
class TrainConfig:
    d: int = 64
    d_field: int = 16
    k_layers: int = 2
    temperature: float = 0.07
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 20
    n_random_neg: int = 8
    n_hard: int = 1
    rng_seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.k_layers < 0 or self.d < 1 or self.d_field < 1:
            raise ConfigError("invalid model dimensions")


class NodeInputs:
    """Per-node model inputs aligned with graph node indices."""

    def __init__(self, sparse, dense, pretrained, has_pretrained, vocab_sizes):
        self.sparse = sparse  # field -> int array (n,)
        self.dense = np.asarray(dense, dtype=float)
        self.pretrained = np.asarray(pretrained, dtype=float)
        self.has_pretrained = np.asarray(has_pretrained, dtype=bool)
        self.vocab_sizes = vocab_sizes  # field -> table rows

    @classmethod
    def from_store(cls, store, items, item_vocab=None):
        """Gather rows of ``store`` for ``items``; item-id index is position + 1."""
        rows = store.rows(items)
        if item_vocab is None:
            item_vocab = {it: i + 1 for i, it in enumerate(items)}
        sparse = {ITEM_FIELD: np.array([item_vocab.get(it, 0) for it in items], dtype=np.int64)}
        sizes = {ITEM_FIELD: len(item_vocab) + 1}
        for f in store.sparse_fields:
            sparse[f] = store.sparse[f][rows]
            sizes[f] = len(store.vocabs[f])
        pre = store.pretrained[rows]
        pre = np.where(store.has_pretrained[rows, None], pre, 0.0)
        return cls(sparse, store.dense[rows], pre, store.has_pretrained[rows], sizes)

    def __len__(self):
        return len(self.dense)

    @property
    def fields(self):
        return list(self.sparse)


def init_params(inputs: NodeInputs, cfg: TrainConfig, rng) -> dict:
    """Parameter tensors keyed by name; GNN combines start as an even center/agg mix."""
    p = {}
    for f in inputs.fields:
        p[f"emb:{f}"] = rng.normal(0.0, cfg.init_scale, size=(inputs.vocab_sizes[f], cfg.d_field))
    width = len(inputs.fields) * cfg.d_field
    if inputs.dense.shape[1]:
        p["dense_proj"] = rng.normal(0.0, 1.0 / np.sqrt(inputs.dense.shape[1]),
                                     size=(inputs.dense.shape[1], cfg.d_field))
        width += cfg.d_field
    if inputs.pretrained.shape[1]:
        p["pretrained_proj"] = rng.normal(0.0, 1.0 / np.sqrt(inputs.pretrained.shape[1]),
                                          size=(inputs.pretrained.shape[1], cfg.d_field))
        width += cfg.d_field
    p["W0"] = rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, cfg.d))
    eye = np.eye(cfg.d)
    for ell in range(1, cfg.k_layers + 1):
        p[f"W{ell}"] = 0.5 * np.vstack([eye, eye]) + rng.normal(0.0, 0.01, size=(2 * cfg.d, cfg.d))
    return p


def concat_inputs(inputs: NodeInputs, rows, params) -> np.ndarray:
    """Layer-0 concat: sparse lookups, dense projection, pretrained projection."""
    parts = [params[f"emb:{f}"][inputs.sparse[f][rows]] for f in inputs.fields]
    if "dense_proj" in params:
        parts.append(inputs.dense[rows] @ params["dense_proj"])
    if "pretrained_proj" in params:
        parts.append(inputs.pretrained[rows] @ params["pretrained_proj"])
    x = np.concatenate(parts, axis=1)
    if x.shape[1] != params["W0"].shape[0]:
        raise ConfigError(f"concat width {x.shape[1]} does not match W0 {params['W0'].shape}")
    return x


def project(inputs: NodeInputs, rows, params) -> np.ndarray:
    """h0 = concat(...) @ W0, no nonlinearity."""
    return concat_inputs(inputs, rows, params) @ params["W0"]


def gnn_block(center, neighbors, weight) -> np.ndarray:
    """One propagation step for a single node.

    ``neighbors`` holds ``(node_id, embedding, importance)`` triples. The aggregate is
    the importance-weighted sum taken in ascending node-id order; the output is
    ``concat(center, aggregate) @ weight``.
    """
    center = np.asarray(center, dtype=float)
    agg = np.zeros_like(center)
    for _, h, w in sorted(neighbors, key=lambda t: t[0]):
        agg = agg + w * np.asarray(h, dtype=float)
    return np.concatenate([center, agg]) @ weight


def cosine_score(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        cosine_score.zero_vectors += 1
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


cosine_score.zero_vectors = 0


def softmax_loss(logits):
    """-log softmax(logits)[0] and its gradient for one row of finite logits."""
    z = logits - logits.max()
    e = np.exp(z)
    p = e / e.sum()
    grad = p.copy()
    grad[0] -= 1.0
    return float(np.log(e.sum()) - z[0]), grad


def loss(target, positive, negatives, temperature):
    """Cross-entropy over cosine logits for one training row.

    Returns ``(loss, d_target, d_positive, [d_negative, ...])``.
    """
    vecs = [np.asarray(positive, float)] + [np.asarray(n, float) for n in negatives]
    if len(vecs) < 2:
        raise ValueError("at least one negative is required")
    t = np.asarray(target, float)
    nt = np.linalg.norm(t)
    norms = [np.linalg.norm(v) for v in vecs]
    cos = np.array([cosine_score(t, v) for v in vecs])
    value, dlogit = softmax_loss(cos / temperature)
    dcos = dlogit / temperature
    d_t = np.zeros_like(t)
    d_vecs = []
    for g, v, nv, c in zip(dcos, vecs, norms, cos):
        if nt == 0 or nv == 0:
            d_vecs.append(np.zeros_like(v))
            continue
        th, vh = t / nt, v / nv
        d_t += g * (vh - c * th) / nt
        d_vecs.append(g * (th - c * vh) / nv)
    return value, d_t, d_vecs[0], d_vecs[1:]


@dataclass
class Batch:
    """Training rows in graph-node indices.

    ``hard`` is (rows, n_hard) with -1 padding; it is filled from the current forward
    pass unless provided.
    """

    targets: np.ndarray
    positives: np.ndarray
    random_negatives: np.ndarray
    hard: np.ndarray | None = None
    neighborhoods: object = None  # sampler.NeighborhoodTable
    hard_exclusions: np.ndarray | None = None

    def nodes(self) -> np.ndarray:
        parts = [self.targets, self.positives, self.random_negatives]
        return np.unique(np.concatenate(parts).astype(np.int64))


@dataclass
class Activations:
    nodes: np.ndarray  # graph indices of the working set U, ascending
    local: dict  # graph index -> row in U
    x: np.ndarray  # concat inputs (|U|, width)
    h: list  # h[l] (|U|, d), valid on rows[l]
    agg: list  # agg[l] for l >= 1, valid on rows[l]
    rows: list  # rows[l]: local rows where layer l is computed
    a_local: sp.csr_matrix | None = None
    out_rows: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def h_out(self, graph_nodes) -> np.ndarray:
        idx = [self.local[int(v)] for v in graph_nodes]
        return self.h[-1][idx]


def forward(nodes, inputs: NodeInputs, params: dict, k_layers: int, agg_matrix=None,
            has_neighborhood=None) -> Activations:
    """Compute h_out for ``nodes`` with PinSAGE-style staging.

    Layer-l outputs of a node use layer-(l-1) outputs of its layer-1 sampled
    neighbors, so the working set grows by one hop per layer. ``agg_matrix`` is the
    row-normalized (n, n) sparse neighbor-importance matrix; ``has_neighborhood``
    flags nodes whose neighborhood was sampled.
    """
    out_nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    levels = [out_nodes]
    frontier = out_nodes
    if k_layers > 0 and agg_matrix is None:
        raise ValueError("agg_matrix is required when k_layers > 0")
    for _ in range(k_layers):
        if has_neighborhood is not None and not np.all(has_neighborhood[frontier]):
            missing = frontier[~has_neighborhood[frontier]]
            raise ValueError(f"missing sampled neighborhood for nodes {missing[:5].tolist()}")
        nbrs = agg_matrix[frontier].indices
        frontier = np.union1d(frontier, nbrs)
        levels.append(frontier)
    u = levels[-1]
    local = {int(v): i for i, v in enumerate(u)}
    # rows[l] = nodes whose layer-l output is needed = levels[k - l].
    rows = [np.searchsorted(u, levels[k_layers - ell]) for ell in range(k_layers + 1)]
    x = concat_inputs(inputs, u, params)
    h0 = x @ params["W0"]
    hs, aggs = [h0], [None]
    a_local = agg_matrix[u][:, u].tocsr() if k_layers > 0 else None
    if a_local is not None:
        a_local.sort_indices()
    d = h0.shape[1]
    for ell in range(1, k_layers + 1):
        r = rows[ell]
        agg = np.zeros((len(u), d))
        agg[r] = a_local[r] @ hs[-1]
        h = np.zeros((len(u), params[f"W{ell}"].shape[1]))
        h[r] = np.concatenate([hs[-1][r], agg[r]], axis=1) @ params[f"W{ell}"]
        hs.append(h)
        aggs.append(agg)
    return Activations(u, local, x, hs, aggs, rows, a_local, rows[-1])


def _cos_rows(hn, a_idx, b_idx):
    return np.einsum("ij,ij->i", hn[a_idx], hn[b_idx])


def batch_loss(acts: Activations, batch: Batch, temperature: float, n_hard: int = 0,
               select_hard=None):
    """Mean cross-entropy over rows plus d loss / d h_out for the working set.

    When ``batch.hard`` is None and ``n_hard > 0`` the hard negatives are selected
    from the current scores with ``select_hard`` and stored on the batch.
    """
    h = acts.h[-1]
    norms = np.linalg.norm(h, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    hn = h / safe[:, None]
    hn[norms == 0] = 0.0
    loc = acts.local
    t = np.array([loc[int(v)] for v in batch.targets])
    p = np.array([loc[int(v)] for v in batch.positives])
    r = np.array([loc[int(v)] for v in batch.random_negatives], dtype=np.int64)
    b = len(t)

    if batch.hard is None and n_hard > 0:
        scores = hn[t] @ hn[p].T
        batch.hard = select_hard(scores, n_hard, batch.targets, batch.positives, batch.hard_exclusions)
    hard = batch.hard if batch.hard is not None else np.full((b, 0), -1, dtype=np.int64)
    hard_loc = np.array([[loc[int(v)] if v >= 0 else -1 for v in row] for row in hard],
                        dtype=np.int64).reshape(b, hard.shape[1])

    cand = np.concatenate([p[:, None], np.broadcast_to(r, (b, len(r))), hard_loc], axis=1)
    mask = cand >= 0
    if (mask.sum(axis=1) < 2).any():
        raise ValueError("every row needs at least one negative")
    cand_safe = np.where(mask, cand, 0)
    cos = np.einsum("id,ijd->ij", hn[t], hn[cand_safe])
    logits = np.where(mask, cos / temperature, -np.inf)
    m = logits.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(logits - m), 0.0)
    z = e.sum(axis=1, keepdims=True)
    prob = e / z
    row_loss = np.log(z[:, 0]) - (logits[:, 0] - m[:, 0])
    value = float(row_loss.mean())

    dlogit = prob.copy()
    dlogit[:, 0] -= 1.0
    dcos = np.where(mask, dlogit / (temperature * b), 0.0)
    # d cos(a, b) / d a = (b_hat - cos * a_hat) / |a|
    th = hn[t]
    ch = hn[cand_safe]
    d_t = np.einsum("ij,ijd->id", dcos, ch) - (dcos * cos).sum(axis=1)[:, None] * th
    d_t /= safe[t][:, None]
    d_c = dcos[:, :, None] * (th[:, None, :] - cos[:, :, None] * ch)
    d_c /= safe[cand_safe][:, :, None]
    grad = np.zeros_like(h)
    np.add.at(grad, t, d_t)
    np.add.at(grad, cand_safe.ravel(), d_c.reshape(-1, h.shape[1]))
    grad[norms == 0] = 0.0
    return value, grad


def backward(acts: Activations, inputs: NodeInputs, params: dict, grad_out: np.ndarray) -> dict:
    """Exact gradients of the loss with respect to every parameter tensor."""
    grads = {name: np.zeros_like(v) for name, v in params.items()}
    k = len(acts.h) - 1
    dh = grad_out.copy()
    d = acts.h[0].shape[1]
    for ell in range(k, 0, -1):
        r = acts.rows[ell]
        z_in = np.concatenate([acts.h[ell - 1][r], acts.agg[ell][r]], axis=1)
        dz = dh[r]
        grads[f"W{ell}"] += z_in.T @ dz
        d_in = dz @ params[f"W{ell}"].T
        prev = np.zeros((len(acts.nodes), d))
        prev[r] += d_in[:, :d]
        prev += acts.a_local[r].T @ d_in[:, d:]
        dh = prev
    grads["W0"] += acts.x.T @ dh
    dx = dh @ params["W0"].T
    u = acts.nodes
    col = 0
    dfield = None
    for f in inputs.fields:
        table = params[f"emb:{f}"]
        dfield = table.shape[1]
        np.add.at(grads[f"emb:{f}"], inputs.sparse[f][u], dx[:, col: col + dfield])
        col += dfield
    if "dense_proj" in params:
        w = params["dense_proj"].shape[1]
        grads["dense_proj"] += inputs.dense[u].T @ dx[:, col: col + w]
        col += w
    if "pretrained_proj" in params:
        w = params["pretrained_proj"].shape[1]
        grads["pretrained_proj"] += inputs.pretrained[u].T @ dx[:, col: col + w]
        col += w
    return grads


class Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params: dict, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr=None) -> dict:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError(f"non-finite gradient in {name} at step {self.t + 1}")
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params

    def state(self) -> dict:
        out = {"t": np.array(self.t)}
        out.update({f"m:{k}": v for k, v in self.m.items()})
        out.update({f"v:{k}": v for k, v in self.v.items()})
        return out


def optimizer_step(params, grads, state: Adam, lr=None):
    return state.step(params, grads, lr)
