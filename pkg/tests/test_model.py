import time

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lightsage.exceptions import TrainingDivergedError
from lightsage.model import (
    Adam,
    Batch,
    NodeInputs,
    TrainConfig,
    backward,
    batch_loss,
    cosine_score,
    forward,
    gnn_block,
    init_params,
    loss,
    optimizer_step,
    project,
    softmax_loss,
)
from lightsage.sampler import NeighborhoodSpec, sample_neighborhoods, select_hard_negatives

from conftest import make_features, random_graph

vectors = arrays(np.float64, 5, elements=st.floats(-10, 10))


def setup_model(n=20, d=8, d_field=4, k=2, seed=0):
    g = random_graph(n, 0.25, seed)
    inputs = NodeInputs.from_store(make_features(g.items, seed=seed), g.items)
    params = init_params(inputs, TrainConfig(d=d, d_field=d_field, k_layers=k), np.random.default_rng(seed))
    table = sample_neighborhoods(g, np.arange(n), NeighborhoodSpec(k_layers=max(k, 1)), np.random.default_rng(seed))
    return g, inputs, params, table.matrix(1)


def test_project_zero_params():
    g, inputs, params, _ = setup_model()
    zero = {k: np.zeros_like(v) for k, v in params.items()}
    assert np.all(project(inputs, np.arange(5), zero) == 0)


def test_project_selects_item_embedding():
    g, inputs, params, _ = setup_model(d=4, d_field=4)
    w0 = np.zeros_like(params["W0"])
    w0[:4, :4] = np.eye(4)  # item-id slot comes first
    params["W0"] = w0
    rows = np.arange(6)
    assert np.allclose(project(inputs, rows, params), params["emb:item"][inputs.sparse["item"][rows]])


def test_project_dense_linear():
    g, inputs, params, _ = setup_model()
    rows = np.arange(g.n_nodes)
    no_dense = dict(params, dense_proj=np.zeros_like(params["dense_proj"]))
    base = project(inputs, rows, no_dense)
    contrib = project(inputs, rows, params) - base
    inputs.dense = inputs.dense * 2
    contrib2 = project(inputs, rows, params) - base
    assert np.allclose(contrib2, 2 * contrib)


def test_block_single_neighbor():
    rng = np.random.default_rng(0)
    c, u = rng.normal(size=3), rng.normal(size=3)
    w = np.vstack([np.zeros((3, 3)), np.eye(3)])
    assert np.array_equal(gnn_block(c, [(7, u, 1.0)], w), u @ np.eye(3))


def test_block_opposite_neighbors_cancel():
    u = np.array([1.0, -2.0, 0.5])
    w = np.vstack([np.zeros((3, 3)), np.eye(3)])
    assert np.allclose(gnn_block(np.ones(3), [(1, u, 0.5), (2, -u, 0.5)], w), 0.0)


def test_block_permutation_bitwise():
    rng = np.random.default_rng(1)
    nbrs = [(i, rng.normal(size=4), rng.random()) for i in range(6)]
    w = rng.normal(size=(8, 4))
    c = rng.normal(size=4)
    assert np.array_equal(gnn_block(c, nbrs, w), gnn_block(c, nbrs[::-1], w))


@settings(max_examples=100, deadline=None)
@given(vectors, vectors, vectors, vectors)
def test_block_superposition(c1, c2, a1, a2):
    w = np.random.default_rng(0).normal(size=(10, 5))
    f = lambda c, a: gnn_block(c, [(0, a, 1.0)], w)
    assert np.allclose(f(c1 + c2, a1 + a2), f(c1, a1) + f(c2, a2), atol=1e-9)


def test_cosine_cases():
    a = np.array([1.0, 2.0, 0.0])
    assert cosine_score(a, a) == pytest.approx(1.0)
    assert cosine_score(a, np.array([-2.0, 1.0, 5.0])) == 0.0
    assert cosine_score(a, -a) == pytest.approx(-1.0)


@settings(max_examples=200, deadline=None)
@given(vectors, vectors)
def test_cosine_bounded(a, b):
    assert -1.0 <= cosine_score(a, b) <= 1.0


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-50, 50)))
def test_softmax_sums_to_one(logits):
    _, grad = softmax_loss(logits)
    probs = grad.copy()
    probs[0] += 1.0
    assert abs(probs.sum() - 1.0) < 1e-12


def test_loss_closed_form():
    t = np.array([1.0, 0.0])
    value, *_ = loss(t, t, [-t], 1.0)
    # -log(e / (e + e^-1)) = log(1 + e^-2)
    assert value == pytest.approx(np.log1p(np.exp(-2.0)), abs=1e-12)
    assert value == pytest.approx(0.1269, abs=1e-4)


def test_loss_tie_is_log2():
    t = np.array([0.3, 0.4])
    value, *_ = loss(t, np.array([1.0, 1.0]), [np.array([1.0, 1.0])], 0.07)
    assert value == pytest.approx(np.log(2.0))


def test_loss_small_temperature():
    t = np.array([1.0, 0.0])
    value, *_ = loss(t, t, [np.array([0.0, 1.0]), np.array([0.5, 0.5])], 0.01)
    assert value < 1e-12


@settings(max_examples=100, deadline=None)
@given(vectors, vectors, vectors)
def test_loss_gradient_orthogonal(t, p, n):
    if min(np.linalg.norm(t), np.linalg.norm(p), np.linalg.norm(n)) < 1e-3:
        return
    _, dt, dp, (dn,) = loss(t, p, [n], 0.5)
    for v, dv in ((t, dt), (p, dp), (n, dn)):
        assert abs(np.dot(v, dv)) <= 1e-8 * max(1.0, np.linalg.norm(v) * np.linalg.norm(dv))


def test_forward_depth_zero():
    g, inputs, params, _ = setup_model(k=0)
    acts = forward(np.arange(5), inputs, params, 0)
    assert np.array_equal(acts.h[-1], project(inputs, acts.nodes, params))


def test_forward_empty_neighborhoods():
    g, inputs, params, _ = setup_model(k=2)
    empty = sp.csr_matrix((g.n_nodes, g.n_nodes))
    acts = forward(np.arange(4), inputs, params, 2, empty)
    d = params["W0"].shape[1]
    expected = project(inputs, acts.nodes, params) @ params["W1"][:d] @ params["W2"][:d]
    assert np.allclose(acts.h[-1], expected)


def test_forward_twins_identical():
    g, inputs, params, agg = setup_model()
    # Make node 1 a twin of node 0: same inputs, same neighborhood row.
    for f in inputs.fields:
        inputs.sparse[f][1] = inputs.sparse[f][0]
    inputs.dense[1] = inputs.dense[0]
    inputs.pretrained[1] = inputs.pretrained[0]
    agg = agg.tolil()
    agg[1] = agg[0]
    agg[:, 1] = 0
    agg[:, 0] = 0
    agg = agg.tocsr()
    acts = forward(np.array([0, 1]), inputs, params, 2, agg)
    assert np.array_equal(acts.h_out([0])[0], acts.h_out([1])[0])


def test_forward_is_pure():
    g, inputs, params, agg = setup_model()
    a = forward(np.arange(10), inputs, params, 2, agg).h[-1]
    b = forward(np.arange(10), inputs, params, 2, agg).h[-1]
    assert np.array_equal(a, b)


def make_batch(g, agg, inputs, params, seed=0, n_rows=8):
    rng = np.random.default_rng(seed)
    targets = rng.choice(g.n_nodes, size=n_rows, replace=False)
    positives = np.array([g.out_neighbors(t)[0][0] for t in targets])
    batch = Batch(targets, positives, rng.choice(g.n_nodes, size=3, replace=False))
    acts = forward(batch.nodes(), inputs, params, 2, agg)
    batch_loss(acts, batch, 0.5, 1, select_hard_negatives)  # fixes batch.hard
    return batch


def total_loss(params, g, inputs, agg, batch, tau=0.5):
    acts = forward(batch.nodes(), inputs, params, 2, agg)
    return batch_loss(acts, batch, tau, 1, select_hard_negatives)


def test_finite_difference_all_groups():
    start = time.perf_counter()
    g, inputs, params, agg = setup_model(n=20, d=6, d_field=3)
    batch = make_batch(g, agg, inputs, params)
    assert batch.hard is not None and (batch.hard >= 0).any()
    acts = forward(batch.nodes(), inputs, params, 2, agg)
    _, g_out = batch_loss(acts, batch, 0.5, 1, select_hard_negatives)
    grads = backward(acts, inputs, params, g_out)
    step = 1e-4
    for name, value in params.items():
        fd = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + step
            up, _ = total_loss(params, g, inputs, agg, batch)
            value[idx] = old - step
            down, _ = total_loss(params, g, inputs, agg, batch)
            value[idx] = old
            fd[idx] = (up - down) / (2 * step)
        scale = max(np.linalg.norm(fd), np.linalg.norm(grads[name]), 1e-12)
        rel = np.linalg.norm(fd - grads[name]) / scale
        assert np.linalg.norm(grads[name]) > 0, name
        assert rel < 1e-4, (name, rel)
    assert time.perf_counter() - start < 60


def test_grad_out_orthogonal_to_h_out():
    g, inputs, params, agg = setup_model()
    batch = make_batch(g, agg, inputs, params, seed=3)
    acts = forward(batch.nodes(), inputs, params, 2, agg)
    _, g_out = batch_loss(acts, batch, 0.5, 1, select_hard_negatives)
    h = acts.h[-1]
    dots = np.einsum("ij,ij->i", h, g_out)
    assert np.all(np.abs(dots) < 1e-8)


def test_adam_zero_grad_keeps_params():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p, lr=0.1)
    optimizer_step(p, {"w": np.zeros(2)}, opt)
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_is_lr():
    p = {"w": np.array([3.0])}
    opt = Adam(p, lr=0.1)
    optimizer_step(p, {"w": np.array([1.0])}, opt)
    # m_hat = 1, v_hat = 1, step = lr * 1 / (1 + eps)
    assert p["w"][0] == pytest.approx(3.0 - 0.1, abs=1e-8)


def test_adam_rejects_non_finite():
    p = {"w": np.zeros(2)}
    with pytest.raises(TrainingDivergedError):
        Adam(p).step(p, {"w": np.array([np.nan, 0.0])})


def test_training_steps_reproducible():
    runs = []
    for _ in range(2):
        g, inputs, params, agg = setup_model(seed=4)
        opt = Adam(params, lr=0.05)
        for s in range(5):
            batch = make_batch(g, agg, inputs, params, seed=s)
            acts = forward(batch.nodes(), inputs, params, 2, agg)
            _, g_out = batch_loss(acts, batch, 0.5, 1, select_hard_negatives)
            opt.step(params, backward(acts, inputs, params, g_out))
        runs.append(params)
    for name in runs[0]:
        assert np.array_equal(runs[0][name], runs[1][name])
