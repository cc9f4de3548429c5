"""scikit-learn style estimators around the LightSAGE training loop."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features_cover, check_graph
from .exceptions import TrainingDivergedError
from .graph import ItemGraph
from .model import (
    Adam,
    Batch,
    NodeInputs,
    TrainConfig,
    backward,
    batch_loss,
    forward,
    init_params,
)
from .sampler import (
    NeighborhoodSpec,
    sample_neighborhoods,
    sample_positives,
    sample_random_negatives,
    select_hard_negatives,
)
from .store import GNN_SEED, EmbeddingStore

logger = logging.getLogger(__name__)

# Stream tags for np.random.default_rng([seed, tag, ...]).
_INIT, _EPOCH, _BATCH, _INFER = 0, 1, 2, 3


class LightSAGE(TransformerMixin, BaseEstimator):
    """Graph neural network producing item embeddings from an item graph.

    ``fit(graph, features)`` trains on dynamically sampled positives, degree-based
    random negatives and in-batch hard negatives. ``transform(items)`` returns the
    final seed embeddings of graph items.
    """

    def __init__(
        self,
        d=64,
        d_field=16,
        k_layers=2,
        walks_per_node=32,
        walk_length=2,
        top_t=10,
        temperature=0.07,
        learning_rate=0.01,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        batch_size=256,
        epochs=20,
        n_random_neg=8,
        n_hard=1,
        uniform_positive=False,
        exclude_neighbors_from_hard=True,
        init_scale=0.1,
        random_state=0,
    ):
        self.d = d
        self.d_field = d_field
        self.k_layers = k_layers
        self.walks_per_node = walks_per_node
        self.walk_length = walk_length
        self.top_t = top_t
        self.temperature = temperature
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.epochs = epochs
        self.n_random_neg = n_random_neg
        self.n_hard = n_hard
        self.uniform_positive = uniform_positive
        self.exclude_neighbors_from_hard = exclude_neighbors_from_hard
        self.init_scale = init_scale
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            d=self.d, d_field=self.d_field, k_layers=self.k_layers,
            temperature=self.temperature, learning_rate=self.learning_rate,
            beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            batch_size=self.batch_size, epochs=self.epochs,
            n_random_neg=self.n_random_neg, n_hard=self.n_hard,
            rng_seed=self.random_state, init_scale=self.init_scale,
        )

    def neighborhood_spec(self) -> NeighborhoodSpec:
        return NeighborhoodSpec(
            k_layers=max(self.k_layers, 1), walks_per_node=self.walks_per_node,
            walk_length=self.walk_length, top_t=self.top_t,
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.get_params(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def _rng(self, *tags):
        return np.random.default_rng([int(self.random_state), *tags])

    def _sample_table(self, graph, rng):
        table = sample_neighborhoods(graph, np.arange(graph.n_nodes), self.neighborhood_spec(), rng)
        return table.matrix(1)

    def fit(self, graph: ItemGraph, features, callback=None):
        check_graph(graph)
        check_features_cover(features, graph.items)
        cfg = self.train_config()
        inputs = NodeInputs.from_store(features, graph.items)
        params = init_params(inputs, cfg, self._rng(_INIT))
        opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)

        n = graph.n_nodes
        edge_keys = graph.src * n + graph.indices  # sorted: CSR order
        trainable = np.flatnonzero(graph.out_degree > 0)
        degree = graph.degree
        history = []
        for epoch in range(cfg.epochs):
            rng = self._rng(_EPOCH, epoch)
            agg = self._sample_table(graph, rng) if cfg.k_layers else None
            order = rng.permutation(trainable)
            positives = sample_positives(graph, order, rng, uniform=self.uniform_positive)
            for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
                brng = self._rng(_BATCH, epoch, bi)
                t = order[start: start + cfg.batch_size]
                p = positives[start: start + cfg.batch_size]
                negs = sample_random_negatives(degree, cfg.n_random_neg, brng, np.union1d(t, p))
                excl = None
                if self.exclude_neighbors_from_hard:
                    keys = t[:, None] * n + p[None, :]
                    pos = np.searchsorted(edge_keys, keys)
                    excl = edge_keys[np.minimum(pos, len(edge_keys) - 1)] == keys
                batch = Batch(t, p, negs, hard_exclusions=excl)
                acts = forward(batch.nodes(), inputs, params, cfg.k_layers, agg)
                value, g_out = batch_loss(acts, batch, cfg.temperature, cfg.n_hard,
                                          select_hard_negatives)
                if not np.isfinite(value):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch} batch {bi}")
                grads = backward(acts, inputs, params, g_out)
                opt.step(params, grads)
                history.append((epoch, bi, value))
            if callback is not None:
                callback(self, epoch, params)
            logger.info("epoch %d mean loss %.4f", epoch,
                        np.mean([h[2] for h in history if h[0] == epoch]))

        self.params_ = params
        self.optimizer_ = opt
        self.inputs_ = inputs
        self.graph_ = graph
        self.items_ = list(graph.items)
        self.item_index_ = dict(graph.index)
        self.loss_history_ = history
        self.embeddings_ = self.infer_embeddings(graph, inputs, params)
        return self

    def infer_embeddings(self, graph, inputs=None, params=None) -> np.ndarray:
        """h_out for every graph node, using neighborhoods from the fixed inference seed."""
        params = self.params_ if params is None else params
        inputs = self.inputs_ if inputs is None else inputs
        agg = self._sample_table(graph, self._rng(_INFER)) if self.k_layers else None
        acts = forward(np.arange(graph.n_nodes), inputs, params, self.k_layers, agg)
        return acts.h[-1][np.searchsorted(acts.nodes, np.arange(graph.n_nodes))]

    def transform(self, items) -> np.ndarray:
        check_is_fitted(self, "embeddings_")
        missing = [it for it in items if it not in self.item_index_]
        if missing:
            raise KeyError(f"items not in the training graph: {missing[:5]}")
        return self.embeddings_[[self.item_index_[it] for it in items]]

    def seed_store(self) -> EmbeddingStore:
        check_is_fitted(self, "embeddings_")
        return EmbeddingStore(self.items_, self.embeddings_, GNN_SEED)

    def loss_curve_csv(self) -> str:
        check_is_fitted(self, "loss_history_")
        rows = ["epoch,batch,loss"] + [f"{e},{b},{v!r}" for e, b, v in self.loss_history_]
        return "\n".join(rows) + "\n"

    def save_checkpoint(self, directory):
        """One .npy file per tensor plus a JSON config echo."""
        check_is_fitted(self, "params_")
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for name, arr in self.params_.items():
            np.save(out / f"param__{name.replace(':', '__')}.npy", arr)
        for name, arr in self.optimizer_.state().items():
            np.save(out / f"adam__{name.replace(':', '__')}.npy", arr)
        meta = {"params": self.get_params(), "config_hash": self.config_hash()}
        (out / "config.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")

    @staticmethod
    def load_params(directory) -> dict:
        out = {}
        for path in sorted(Path(directory).glob("param__*.npy")):
            out[path.stem[len("param__"):].replace("__", ":")] = np.load(path)
        return out


def train(graph: ItemGraph, features, **params):
    """Fit a LightSAGE model and return it with its seed embedding store."""
    model = LightSAGE(**params).fit(graph, features)
    return model, model.seed_store()
