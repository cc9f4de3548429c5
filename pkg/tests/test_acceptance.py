"""Acceptance gate. Each test prints one ``criterion N: PASS|FAIL`` line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline; they are
also echoed to the terminal through ``capsys.disabled`` without ``-s``.
"""

import json
import time

import numpy as np
import pytest

import test_cf
import test_evaluation
import test_model
import test_sampler
import test_tail
from lightsage.cli import file_hash, main
from lightsage.evaluation import cluster_purity, compute_tail_set, knn
from lightsage.ingest import read_clusters
from lightsage.store import GNN_SEED, GRAPH_POPULATED, EmbeddingStore

pytestmark = pytest.mark.slow

ABLATION_SEEDS = (0, 1, 2, 3, 4)
CANONICAL_SEED = 7


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def run_checks(checks):
    failed = []
    for check in checks:
        try:
            check()
        except AssertionError as exc:
            failed.append(f"{check.__name__}: {exc}")
    return failed


def cli(out, *args, seed=CANONICAL_SEED, config=None):
    argv = [args[0], "--seed", str(seed), "--out", str(out), *args[1:]]
    if config:
        argv += ["--config", config]
    assert main(argv) == 0, argv


def load_report(out):
    return json.loads((out / "eval" / "report.json").read_text())


def test_criterion_1_gradients(capsys):
    start = time.perf_counter()
    failed = run_checks([test_model.test_finite_difference_all_groups])
    took = time.perf_counter() - start
    report(capsys, 1, not failed and took < 60, f"finite differences, {took:.1f}s {failed}")


def test_criterion_2_swing_oracle(capsys):
    failed = run_checks([test_cf.test_swing_oracle_200_instances_fast])
    report(capsys, 2, not failed, f"200 instances exact and under 10s {failed}")


def test_criterion_3_aggregation(capsys):
    failed = run_checks([test_tail.test_graph_vectors_in_seed_hull,
                         test_tail.test_weighted_mean_of_two_neighbors,
                         test_tail.test_single_seed_neighbor_copies_it])
    report(capsys, 3, not failed, f"100 random cases within 1e-12 and inside the hull {failed}")


def test_criterion_4_negative_law(capsys):
    failed = run_checks([test_sampler.test_negative_total_variation_100_nodes])
    report(capsys, 4, not failed, f"TV < 0.01 at 1e6 draws {failed}")


@pytest.fixture(scope="module")
def canonical(tmp_path_factory):
    out = tmp_path_factory.mktemp("canonical")
    start = time.perf_counter()
    cli(out, "gen-synth")
    cli(out, "build-graph")
    cli(out, "train")
    cli(out, "infer-tail")
    cli(out, "retrieve")
    cli(out, "retrieve", "--method", "swing")
    cli(out, "evaluate", "--baseline", str(out / "retrieval" / "swing.tsv"))
    return out, time.perf_counter() - start


def test_criterion_5_synthetic_end_to_end(capsys, canonical):
    out, took = canonical
    rep = load_report(out)
    clusters = read_clusters(out / "data" / "clusters.tsv")
    seeds = EmbeddingStore.read(out / "model" / "seeds.tsv")
    purity = cluster_purity(knn(seeds, seeds.items, 10), clusters, 10)

    store = EmbeddingStore.read(out / "embeddings" / "store.tsv")
    seed_only = store.subset(lambda it, p: p == GNN_SEED)
    populated = [it for it, p in zip(store.items, store.provenance) if p == GRAPH_POPULATED]
    hits = 0
    for it in populated:
        probe = EmbeddingStore(seed_only.items + [it], np.vstack([seed_only.vectors, store[it]]), GNN_SEED)
        nearest = knn(probe, [it], 1).top(it)[0]
        hits += clusters[nearest] == clusters[it]
    share = hits / len(populated) if populated else 0.0

    auc, rnd = rep["auc"], rep["counts"]["random_embedding_auc"]
    parts = {
        "a_auc": auc >= 0.90,
        "a_random": abs(rnd - 0.50) <= 0.05,
        "b_purity": purity >= 0.80,
        "c_tail_cluster": share >= 0.75,
        "runtime": took < 15 * 60,
    }
    detail = (f"auc={auc:.4f} random={rnd:.4f} purity={purity:.4f} "
              f"tail_nearest_seed_same_cluster={share:.4f} ({len(populated)} items) "
              f"runtime={took:.0f}s parts={parts}")
    report(capsys, 5, all(parts.values()), detail)


def ablation(base, seed):
    """Tail unique recall for the four configurations of one seed."""
    out = base / f"seed{seed}"
    cli(out, "gen-synth", seed=seed)
    cli(out, "retrieve", "--method", "swing", seed=seed)
    swing = str(out / "retrieval" / "swing.tsv")
    cli(out, "build-graph", seed=seed)
    cli(out, "train", seed=seed)
    tur = {}
    for strategy in ("none", "content", "content+graph"):
        cli(out, "infer-tail", "--strategy", strategy, seed=seed)
        name = "store" if strategy == "content+graph" else f"store_{strategy}"
        cli(out, "retrieve", "--store", str(out / "embeddings" / f"{name}.tsv"), seed=seed)
        cli(out, "evaluate", "--no-auc", "--retrieval", name, "--baseline", swing, seed=seed)
        tur[strategy] = load_report(out)["tail_unique_recall"]

    direct = base / f"seed{seed}_direct"
    direct.mkdir()
    cfg = direct / "config.json"
    cfg.write_text(json.dumps({"ingest": {"data_dir": str(out / "data")}}))
    cli(direct, "build-graph", "--no-cf", seed=seed, config=str(cfg))
    cli(direct, "train", seed=seed, config=str(cfg))
    cli(direct, "infer-tail", seed=seed, config=str(cfg))
    cli(direct, "retrieve", seed=seed, config=str(cfg))
    cli(direct, "evaluate", "--no-auc", "--baseline", swing, seed=seed, config=str(cfg))
    tur["direct"] = load_report(direct)["tail_unique_recall"]
    return tur


def test_criterion_6_ablation_direction(capsys, tmp_path_factory):
    base = tmp_path_factory.mktemp("ablation")
    rows, ordering, cf_gain = [], 0, 0
    for seed in ABLATION_SEEDS:
        t = ablation(base, seed)
        o = t["none"] < t["content"] < t["content+graph"]
        c = t["content+graph"] > t["direct"]
        ordering += o
        cf_gain += c
        rows.append(f"seed{seed}: none={t['none']:.4f} content={t['content']:.4f} "
                    f"content+graph={t['content+graph']:.4f} direct_only={t['direct']:.4f} "
                    f"order={o} cf={c}")
    both = sum(r.endswith("order=True cf=True") for r in rows)
    detail = (f"ordering on {ordering}/5, cf gain on {cf_gain}/5, both on {both}/5 (need 4)\n  "
              + "\n  ".join(rows))
    report(capsys, 6, both >= 4, detail)


def test_criterion_7_determinism(capsys, canonical):
    out, _ = canonical
    watched = ["graph", "model", "embeddings", "retrieval", "eval", "manifests"]
    before = {p: file_hash(p) for d in watched for p in sorted((out / d).rglob("*")) if p.is_file()}
    cli(out, "build-graph")
    cli(out, "train")
    cli(out, "infer-tail")
    cli(out, "retrieve")
    cli(out, "retrieve", "--method", "swing")
    cli(out, "evaluate", "--baseline", str(out / "retrieval" / "swing.tsv"))
    after = {p: file_hash(p) for d in watched for p in sorted((out / d).rglob("*")) if p.is_file()}
    changed = sorted(str(p.relative_to(out)) for p in before if after.get(p) != before[p])
    ok = not changed and set(before) == set(after)
    report(capsys, 7, ok, f"{len(before)} files byte-identical after rerun, changed={changed}")


def test_criterion_8_metric_oracles(capsys):
    failed = run_checks([
        test_evaluation.test_auc_hand_cases,
        test_evaluation.test_auc_matches_pairwise,
        test_evaluation.test_knn_matches_naive_scan,
        test_evaluation.test_unique_recall_hand_scenario,
        test_evaluation.test_tail_set_ten_items,
        test_evaluation.test_tail_set_ties_by_id,
        test_evaluation.test_tail_set_single_item,
    ])
    # ceil(0.9 n) in integer arithmetic
    sizes_ok = all(len(compute_tail_set({f"i{j}": j % 7 for j in range(n)}, 0.9)) == (9 * n + 9) // 10
                   for n in range(1, 301))
    report(capsys, 8, not failed and sizes_ok, f"rank AUC, knn scan, 5-pair recall, tail size {failed}")
