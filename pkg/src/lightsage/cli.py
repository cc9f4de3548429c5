"""Command line pipeline: gen-synth, build-graph, train, infer-tail, retrieve, evaluate.

Every subcommand reads one JSON config (unknown keys are rejected), writes its
outputs atomically under ``--out`` and leaves a manifest with the resolved config
and sha256 hashes of its inputs in ``<out>/manifests/<command>.json``.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .cf import CfConfig, UserItemClicks, scores_to_edges, search_cf_scores, swing_retrieval, swing_scores
from .estimator import LightSAGE
from .evaluation import (
    EvalReport,
    RetrievalResult,
    auc_link_prediction,
    compute_tail_set,
    holdout_negatives,
    knn,
    split_links,
    unique_recall,
)
from .exceptions import ConfigError, LightSAGEError
from .features import load_features
from .graph import GraphBuildConfig, ItemGraph, assemble_graph, build_direct_edges, graph_stats
from .ingest import (
    SpamPolicy,
    SyntheticSpec,
    atomic_write_text,
    click_counts,
    filter_spam,
    generate_synthetic,
    parse_click_log,
    parse_search_log,
    read_future_clicks,
)
from .store import GNN_SEED, EmbeddingStore
from .tail import STRATEGIES, resolve_all

logger = logging.getLogger("lightsage")

_TRAIN_KEYS = (
    "d", "d_field", "k_layers", "temperature", "learning_rate", "beta1", "beta2", "eps",
    "batch_size", "epochs", "n_random_neg", "n_hard", "uniform_positive",
    "exclude_neighbors_from_hard", "init_scale",
)

DEFAULTS = {
    "seed": 7,
    "out": "run",
    "ingest": {
        "data_dir": None,  # defaults to <out>/data
        "clicks": "clicks.tsv",
        "searches": "searches.tsv",
        "recent_clicks": "recent_clicks.tsv",
        "features": "features.tsv",
        "future_clicks": "future_clicks.tsv",
        "spam": {"max_clicks_per_user_per_day": 200, "max_clicks_per_user_item_pair": 3},
        "synthetic": {f.name: f.default for f in fields(SyntheticSpec) if f.name != "rng_seed"},
    },
    "graph": {"min_edge_users": 2, "inference_divisor": 2.0, "write_inference": True},
    "cf": {
        "enabled": True,
        # Swing sums over user pairs, so its raw scores sit far above click counts.
        "swing": {"swing_alpha": 1.0, "top_n_per_item": 20, "penalty_factor": 0.005,
                  "min_score": 0.0, "max_user_clicks": 100},
        "search_cf": {"top_n_per_item": 20, "penalty_factor": 0.5, "min_score": 0.0},
    },
    "sampler": {"walks_per_node": 32, "walk_length": 2, "top_t": 10},
    "train": {
        "d": 64, "d_field": 16, "k_layers": 2, "temperature": 0.07, "learning_rate": 0.01,
        "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "batch_size": 256, "epochs": 20,
        "n_random_neg": 8, "n_hard": 1, "uniform_positive": False,
        "exclude_neighbors_from_hard": True, "init_scale": 0.1,
    },
    "tail": {"strategy": "content+graph", "min_seeds": 3},
    "eval": {
        "k": 100, "holdout_frac": 0.05, "batch_size": 256, "n_hard": 1,
        "tail_fraction": 0.9, "baselines": [], "auc": True, "recall": True,
    },
}


# ---------------------------------------------------------------- config


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, path)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then command-line overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def _train_params(cfg) -> dict:
    params = {k: cfg["train"][k] for k in _TRAIN_KEYS}
    params.update(cfg["sampler"])
    params["random_state"] = int(cfg["seed"])
    return params


def _cf_configs(cfg):
    c = cfg["cf"]
    return CfConfig(**c["swing"]), CfConfig(**c["search_cf"])


# ---------------------------------------------------------------- files


def file_hash(path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(str(sub.relative_to(path)).encode())
            h.update(file_hash(sub).encode())
        return h.hexdigest()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Paths and manifest bookkeeping of one subcommand invocation."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.inputs: dict = {}
        self.outputs: list = []

    def data(self, name) -> Path:
        base = self.cfg["ingest"]["data_dir"] or self.out / "data"
        return Path(base) / self.cfg["ingest"][name]

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def use(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"missing input {path}")
        self.inputs[str(path)] = file_hash(path)
        return path

    def write(self, path, text: str):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(path, text)
        self.outputs.append(str(path))

    def write_dir(self, path, fill):
        """Fill a fresh temp directory, then swap it in for ``path``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=path.name + ".", dir=path.parent))
        try:
            fill(tmp)
            if path.exists():
                shutil.rmtree(path)
            os.replace(tmp, path)
        finally:
            if tmp.exists():
                shutil.rmtree(tmp)
        self.outputs.append(str(path))

    def manifest(self, extra=None):
        doc = {
            "command": self.command,
            "config": self.cfg,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {p: file_hash(p) for p in sorted(self.outputs)},
        }
        if extra:
            doc.update(extra)
        self.write(self.path("manifests", f"{self.command}.json"),
                   json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------- commands


def cmd_gen_synth(run: Run, args):
    spec = SyntheticSpec(rng_seed=int(run.cfg["seed"]), **run.cfg["ingest"]["synthetic"])
    bundle = generate_synthetic(spec)
    target = run.cfg["ingest"]["data_dir"] or run.path("data")
    run.write_dir(target, bundle.write)
    print(f"wrote {len(bundle.clicks)} clicks, {len(bundle.searches)} search clicks, "
          f"{len(bundle.future_clicks)} future pairs to {target}")
    run.manifest()


def _load_events(run: Run, with_recent: bool):
    spam = SpamPolicy(**run.cfg["ingest"]["spam"])
    clicks = filter_spam(parse_click_log(run.use(run.data("clicks"))).events, spam)
    recent = []
    if with_recent and run.data("recent_clicks").exists():
        recent = filter_spam(parse_click_log(run.use(run.data("recent_clicks"))).events, spam)
    return clicks, recent


def _cf_edges(run: Run, clicks, no_cf: bool):
    if no_cf or not run.cfg["cf"]["enabled"]:
        return []
    swing_cfg, search_cfg = _cf_configs(run.cfg)
    searches = parse_search_log(run.use(run.data("searches"))).events
    edges = scores_to_edges(swing_scores(UserItemClicks.from_events(clicks), swing_cfg), swing_cfg, "swing")
    edges += scores_to_edges(search_cf_scores(searches, search_cfg), search_cfg, "search_cf")
    return edges


def cmd_build_graph(run: Run, args):
    gcfg = run.cfg["graph"]
    features = load_features(run.use(run.data("features")))
    clicks, recent = _load_events(run, gcfg["write_inference"])
    cf_edges = _cf_edges(run, clicks, args.no_cf)

    train_cfg = GraphBuildConfig(gcfg["min_edge_users"], "training", gcfg["inference_divisor"])
    g = assemble_graph(build_direct_edges(clicks, train_cfg), cf_edges, features)
    run.write(run.path("graph", "train_graph.tsv"), g.to_tsv())
    stats = {"train": graph_stats(g)}
    if gcfg["write_inference"]:
        inf_cfg = GraphBuildConfig(gcfg["min_edge_users"], "inference", gcfg["inference_divisor"])
        gi = assemble_graph(build_direct_edges(clicks + recent, inf_cfg), cf_edges, features)
        run.write(run.path("graph", "inference_graph.tsv"), gi.to_tsv())
        stats["inference"] = graph_stats(gi)
    run.write(run.path("graph", "stats.json"), _json(stats))
    s = stats["train"]
    print(f"training graph: {s['nodes']} nodes, {s['edges']} edges")
    run.manifest({"no_cf": bool(args.no_cf)})


def _fit(run: Run, graph, features):
    model = LightSAGE(**_train_params(run.cfg))
    return model.fit(graph, features)


def cmd_train(run: Run, args):
    features = load_features(run.use(run.data("features")))
    graph = ItemGraph.read(run.use(run.path("graph", "train_graph.tsv")))
    model = _fit(run, graph, features)
    run.write_dir(run.path("model", "checkpoint"), model.save_checkpoint)
    run.write(run.path("model", "loss.csv"), model.loss_curve_csv())
    run.write(run.path("model", "seeds.tsv"), model.seed_store().to_text())
    last = [v for e, _, v in model.loss_history_ if e == model.epochs - 1]
    print(f"trained {len(model.items_)} seed embeddings, final epoch loss {np.mean(last):.4f}")
    run.manifest({"config_hash": model.config_hash()})


def cmd_infer_tail(run: Run, args):
    features = load_features(run.use(run.data("features")))
    seeds = EmbeddingStore.read(run.use(run.path("model", "seeds.tsv")))
    if seeds.dim != run.cfg["train"]["d"]:
        raise ConfigError(f"seed embeddings have dimension {seeds.dim}, config says {run.cfg['train']['d']}")
    strategy = args.strategy or run.cfg["tail"]["strategy"]
    gpath = run.path("graph", "inference_graph.tsv")
    graph = ItemGraph.read(run.use(gpath)) if "graph" in strategy else None
    store = resolve_all(seeds, graph, features, run.cfg["tail"]["min_seeds"], strategy)
    run.write(run.path("embeddings", f"{_tag(strategy)}.tsv"), store.to_text())
    hist = store.histogram()
    print("provenance: " + ", ".join(f"{k}={v}" for k, v in hist.items()))
    run.manifest({"strategy": strategy, "provenance": hist})


def _tag(strategy: str) -> str:
    return "store" if strategy == "content+graph" else f"store_{strategy.replace('+', '_')}"


def _triggers(run: Run):
    future = read_future_clicks(run.use(run.data("future_clicks")))
    return future, sorted({b for _, b, _ in future})


def cmd_retrieve(run: Run, args):
    k = args.k or run.cfg["eval"]["k"]
    future, triggers = _triggers(run)
    if args.method == "swing":
        swing_cfg, _ = _cf_configs(run.cfg)
        swing_cfg = CfConfig(**{**asdict(swing_cfg), "top_n_per_item": max(k, swing_cfg.top_n_per_item)})
        clicks, recent = _load_events(run, True)
        scores = swing_scores(UserItemClicks.from_events(clicks + recent), swing_cfg)
        result = RetrievalResult.from_mapping(swing_retrieval(scores, triggers, k), k, triggers)
        name = "swing"
    else:
        store_path = Path(args.store) if args.store else run.path("embeddings", "store.tsv")
        store = EmbeddingStore.read(run.use(store_path))
        result = knn(store, triggers, k)
        name = args.name or store_path.stem
    run.write(run.path("retrieval", f"{name}.tsv"), result.to_tsv())
    print(f"{name}: top-{k} lists for {len(result.lists)} of {len(triggers)} triggers")
    run.command = f"retrieve-{name}"
    run.manifest({"method": args.method, "k": k})


def cmd_evaluate(run: Run, args):
    ecfg = run.cfg["eval"]
    k = args.k or ecfg["k"]
    seed = int(run.cfg["seed"])
    report = EvalReport(config={
        "k": k, "holdout_frac": ecfg["holdout_frac"], "seed": seed,
        "auc_batch_size": ecfg["batch_size"], "n_hard": ecfg["n_hard"],
        "tail_fraction": ecfg["tail_fraction"], "train": _train_params(run.cfg),
    })

    if ecfg["auc"] and not args.no_auc:
        features = load_features(run.use(run.data("features")))
        graph = ItemGraph.read(run.use(run.path("graph", "train_graph.tsv")))
        train_g, holdout = split_links(graph, ecfg["holdout_frac"], seed)
        model = _fit(run, train_g, features)
        store = model.seed_store()
        known = graph.edge_keys()
        negatives = holdout_negatives(store, holdout, known, ecfg["batch_size"], ecfg["n_hard"])
        report.auc = auc_link_prediction(store, holdout, known, negatives=negatives)
        rand = np.random.default_rng([seed, 99]).normal(size=store.vectors.shape)
        report.counts["random_embedding_auc"] = auc_link_prediction(
            EmbeddingStore(store.items, rand, GNN_SEED), holdout, known, negatives=negatives)
        report.counts["holdout_edges"] = len(holdout)
        report.counts["auc_negatives"] = len(negatives)
        report.notes.append("random-embedding AUC is scored on the trained model's hard negative pairs")

    if ecfg["recall"] and not args.no_recall:
        future, triggers = _triggers(run)
        name = args.retrieval or "store"
        own = RetrievalResult.from_tsv(run.use(run.path("retrieval", f"{name}.tsv")).read_text(), k)
        own.queries = triggers
        baseline_paths = list(args.baseline or []) + list(ecfg["baselines"])
        baselines = [RetrievalResult.from_tsv(run.use(p).read_text(), k) for p in baseline_paths]
        clicks, _ = _load_events(run, False)
        features = load_features(run.use(run.data("features")))
        tail = compute_tail_set(click_counts(clicks, features.items), ecfg["tail_fraction"])
        rep = unique_recall(own, baselines, [(b, a) for _, b, a in future], tail)
        report.unique_recall = rep.unique_recall
        report.tail_unique_recall = rep.tail_unique_recall
        report.plain_recall = rep.plain_recall
        report.counts.update(pairs=rep.pairs, tail_pairs=rep.tail_pairs, hits=rep.hits,
                             tail_hits=rep.tail_hits, plain_hits=rep.plain_hits,
                             tail_items=len(tail), tail_threshold=tail.threshold)
        report.config["baselines"] = [str(p) for p in baseline_paths]
        report.notes.append("unique recall denominator: every future pair whose trigger was queried")
        if not baselines:
            report.notes.append("no baseline given: unique recall equals plain recall@K")
        for p, b in zip(baseline_paths, baselines):
            b.queries = triggers
            plain = unique_recall(b, [], [(x, a) for _, x, a in future], tail).plain_recall
            report.counts[f"baseline_plain_recall:{Path(p).stem}"] = plain
            if plain > 0:
                report.counts[f"relative_delta_plain_recall:{Path(p).stem}"] = rep.plain_recall / plain - 1

    report.inputs = dict(sorted(run.inputs.items()))
    run.write(run.path("eval", "report.json"), report.to_json())
    shown = {k2: getattr(report, k2) for k2 in ("auc", "unique_recall", "tail_unique_recall")}
    print(" ".join(f"{k2}={v:.4f}" for k2, v in shown.items() if v is not None))
    run.manifest()


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "infer-tail": cmd_infer_tail,
    "retrieve": cmd_retrieve,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="global rng seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lightsage", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-synth", parents=[common], help="write a synthetic dataset")
    p = sub.add_parser("build-graph", parents=[common], help="build training and inference graphs")
    p.add_argument("--no-cf", action="store_true", help="direct click edges only")
    sub.add_parser("train", parents=[common], help="train seed embeddings")
    p = sub.add_parser("infer-tail", parents=[common], help="populate long-tail embeddings")
    p.add_argument("--strategy", choices=STRATEGIES)
    p = sub.add_parser("retrieve", parents=[common], help="top-K retrieval for future triggers")
    p.add_argument("--method", choices=("lightsage", "swing"), default="lightsage")
    p.add_argument("--store", help="embedding store (default <out>/embeddings/store.tsv)")
    p.add_argument("--name", help="output name under <out>/retrieval")
    p.add_argument("--k", type=int)
    p = sub.add_parser("evaluate", parents=[common], help="AUC and unique recall report")
    p.add_argument("--retrieval", help="name of the retrieval file to score (default store)")
    p.add_argument("--baseline", action="append", help="baseline retrieval TSV (repeatable)")
    p.add_argument("--k", type=int)
    p.add_argument("--no-auc", action="store_true")
    p.add_argument("--no-recall", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](Run(args.command, cfg), args)
    except (LightSAGEError, ValueError, OSError, KeyError, FloatingPointError) as exc:
        print(f"lightsage {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
