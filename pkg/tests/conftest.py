import numpy as np
import pytest

from lightsage.features import features_from_rows
from lightsage.graph import ItemGraph, PROVENANCES

FEATURE_NAMES = ["category", "brand", "shop", "price", "rating", "pretrained"]
FEATURE_KINDS = ["sparse", "sparse", "sparse", "dense", "dense", "pretrained"]


def feature_rows(items, clusters=None, seed=0, pretrained_dim=3):
    rng = np.random.default_rng(seed)
    rows = []
    for j, it in enumerate(items):
        c = clusters[it] if clusters else j % 3
        vec = ",".join(f"{x:.6f}" for x in rng.normal(size=pretrained_dim) + c)
        rows.append([it, f"dept>cat{c}", f"b{c}_{j % 2}", f"s{j % 4}",
                     f"{10 ** (1 + c + rng.normal(0, 0.1)):.2f}", f"{rng.uniform(3, 5):.1f}", vec])
    return rows


def make_features(items, clusters=None, seed=0, pretrained_dim=3):
    return features_from_rows(FEATURE_NAMES, FEATURE_KINDS, feature_rows(items, clusters, seed, pretrained_dim))


def random_graph(n=20, p=0.3, seed=0, prefix="n"):
    """Directed graph with positive integer direct weights and no self-loops."""
    rng = np.random.default_rng(seed)
    items = [f"{prefix}{i:03d}" for i in range(n)]
    src, dst, comp = [], [], []
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < p:
                src.append(i)
                dst.append(j)
                row = [0.0] * len(PROVENANCES)
                row[0] = float(rng.integers(1, 6))
                comp.append(row)
    # Keep every node on at least one out-edge.
    for i in range(n):
        if i not in src:
            src.append(i)
            dst.append((i + 1) % n)
            comp.append([1.0, 0.0, 0.0])
    return ItemGraph.from_edges(items, src, dst, comp)


def clustered_graph(n_clusters=3, per_cluster=6, seed=0):
    """Dense intra-cluster graph plus a little cross-cluster noise."""
    rng = np.random.default_rng(seed)
    n = n_clusters * per_cluster
    items = [f"c{i // per_cluster}_{i % per_cluster}" for i in range(n)]
    src, dst, comp = [], [], []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            same = i // per_cluster == j // per_cluster
            if rng.random() < (0.8 if same else 0.02):
                src.append(i)
                dst.append(j)
                comp.append([float(rng.integers(1, 5)), 0.0, 0.0])
    clusters = {it: i // per_cluster for i, it in enumerate(items)}
    return ItemGraph.from_edges(items, src, dst, comp), clusters


@pytest.fixture
def small_graph():
    return random_graph()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
