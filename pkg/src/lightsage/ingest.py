"""Behaviour-log parsing, spam filtering and synthetic data generation."""

from __future__ import annotations

import logging
import os
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import ConfigError, LogFormatError

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400
# 2023-02-01T00:00:00Z
EPOCH_START = 1_675_209_600


class ClickEvent(NamedTuple):
    user_id: str
    trigger_item: str | None
    clicked_item: str
    timestamp: int


class SearchEvent(NamedTuple):
    user_id: str
    query: str
    clicked_item: str
    timestamp: int


def normalize_query(query: str) -> str:
    return " ".join(query.lower().split())


@dataclass(frozen=True)
class SpamPolicy:
    max_clicks_per_user_per_day: int = 200
    max_clicks_per_user_item_pair: int = 3

    def __post_init__(self):
        if self.max_clicks_per_user_per_day < 1 or self.max_clicks_per_user_item_pair < 1:
            raise ConfigError("spam policy thresholds must be >= 1")


class ParseResult(NamedTuple):
    events: list
    skipped: int


def _read_rows(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read log {path}: {exc}") from exc


def _finish(events, skipped, total, path):
    if total and skipped * 2 > total:
        raise LogFormatError(f"{path}: {skipped} of {total} rows malformed")
    if skipped:
        logger.warning("%s: skipped %d malformed rows", path, skipped)
    return ParseResult(events, skipped)


def parse_click_log(path) -> ParseResult:
    """Read a ``user, trigger, clicked, timestamp`` TSV click log.

    Malformed rows are skipped and counted; more than half malformed is fatal.
    """
    events, skipped, total = [], 0, 0
    for line in _read_rows(path):
        if not line.strip():
            continue
        total += 1
        cols = line.split("\t")
        try:
            if len(cols) < 4:
                raise ValueError("too few columns")
            user, trigger, clicked = cols[0], cols[1] or None, cols[2]
            ts = int(cols[3])
            if not user or not clicked or ts < 0 or trigger == clicked:
                raise ValueError("invalid field")
        except ValueError:
            skipped += 1
            continue
        events.append(ClickEvent(user, trigger, clicked, ts))
    return _finish(events, skipped, total, path)


def parse_search_log(path) -> ParseResult:
    events, skipped, total = [], 0, 0
    for line in _read_rows(path):
        if not line.strip():
            continue
        total += 1
        cols = line.split("\t")
        try:
            if len(cols) < 4:
                raise ValueError("too few columns")
            query = normalize_query(cols[1])
            ts = int(cols[3])
            if not cols[0] or not query or not cols[2] or ts < 0:
                raise ValueError("invalid field")
        except ValueError:
            skipped += 1
            continue
        events.append(SearchEvent(cols[0], query, cols[2], ts))
    return _finish(events, skipped, total, path)


def write_click_log(path, events: Iterable[ClickEvent]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in events:
            fh.write(f"{e.user_id}\t{e.trigger_item or ''}\t{e.clicked_item}\t{e.timestamp}\n")


def write_search_log(path, events: Iterable[SearchEvent]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in events:
            fh.write(f"{e.user_id}\t{e.query}\t{e.clicked_item}\t{e.timestamp}\n")


def filter_spam(events: Sequence[ClickEvent], policy: SpamPolicy) -> list[ClickEvent]:
    """Drop spam users entirely and cap repeated (user, trigger, clicked) triples.

    A user is spam if they exceed the daily cap on any UTC calendar day. Repeated
    triples keep their earliest occurrences. Output preserves input order.
    """
    per_day = Counter((e.user_id, e.timestamp // SECONDS_PER_DAY) for e in events)
    spam_users = {u for (u, _), n in per_day.items() if n > policy.max_clicks_per_user_per_day}

    kept_idx = []
    order = sorted(range(len(events)), key=lambda i: (events[i].timestamp, i))
    seen = Counter()
    for i in order:
        e = events[i]
        if e.user_id in spam_users:
            continue
        key = (e.user_id, e.trigger_item, e.clicked_item)
        if seen[key] >= policy.max_clicks_per_user_item_pair:
            continue
        seen[key] += 1
        kept_idx.append(i)
    kept_idx.sort()
    if spam_users:
        logger.info("filter_spam: removed %d spam users", len(spam_users))
    return [events[i] for i in kept_idx]


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-cluster behaviour generator settings.

    ``n_events`` counts training-period clicks. Recent-period clicks (used for the
    relaxed inference graph), search clicks and future clicks are sized relative to it.
    """

    n_items: int = 1000
    n_clusters: int = 10
    n_users: int = 20_000
    n_events: int = 500_000
    intra_cluster_prob: float = 0.9
    tail_fraction: float = 0.2
    rng_seed: int = 7
    pdp_fraction: float = 0.7
    search_fraction: float = 0.2
    recent_fraction: float = 0.2
    future_fraction: float = 0.05
    popularity_exponent: float = 0.6
    feature_noise: float = 0.25
    pretrained_dim: int = 8
    n_spam_users: int = 5
    spam_clicks_per_user: int = 400
    training_days: int = 30

    def validate(self):
        if min(self.n_items, self.n_clusters, self.n_users, self.n_events) < 1:
            raise ConfigError("n_items, n_clusters, n_users, n_events must be positive")
        if self.n_clusters > self.n_items:
            raise ConfigError("n_clusters must not exceed n_items")
        for name in ("intra_cluster_prob", "tail_fraction", "pdp_fraction", "feature_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.n_items - round(self.tail_fraction * self.n_items) < 2 * self.n_clusters:
            raise ConfigError("too few trainable items per cluster")
        if self.intra_cluster_prob < 0.5:
            warnings.warn("intra_cluster_prob < 0.5 leaves little planted structure", stacklevel=2)


@dataclass
class SyntheticBundle:
    clicks: list
    searches: list
    recent_clicks: list
    future_clicks: list  # (user, trigger, clicked)
    features: list  # rows of the feature TSV, header first
    clusters: dict  # item -> cluster id
    tail_items: set = field(default_factory=set)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_click_log(out / "clicks.tsv", self.clicks)
        write_search_log(out / "searches.tsv", self.searches)
        write_click_log(out / "recent_clicks.tsv", self.recent_clicks)
        with open(out / "future_clicks.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for u, b, a in self.future_clicks:
                fh.write(f"{u}\t{b}\t{a}\n")
        with open(out / "features.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for row in self.features:
                fh.write("\t".join(row) + "\n")
        with open(out / "clusters.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for item in sorted(self.clusters):
                fh.write(f"{item}\t{self.clusters[item]}\n")
        with open(out / "tail_items.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for item in sorted(self.tail_items):
                fh.write(f"{item}\n")


def read_future_clicks(path) -> list[tuple[str, str, str]]:
    out = []
    for line in _read_rows(path):
        cols = line.split("\t")
        if len(cols) >= 3 and cols[1] and cols[2]:
            out.append((cols[0], cols[1], cols[2]))
    return out


def read_clusters(path) -> dict[str, int]:
    out = {}
    for line in _read_rows(path):
        cols = line.split("\t")
        if len(cols) >= 2:
            out[cols[0]] = int(cols[1])
    return out


class _Sampler:
    """Popularity-weighted item draws restricted to a cluster."""

    def __init__(self, members, weights):
        self.members = members
        self.cdf = [np.cumsum(w) / np.sum(w) for w in weights]

    def draw(self, rng, clusters):
        clusters = np.asarray(clusters)
        out = np.empty(len(clusters), dtype=np.int64)
        u = rng.random(len(clusters))
        for c in np.unique(clusters):
            mask = clusters == c
            pos = np.searchsorted(self.cdf[c], u[mask], side="right")
            out[mask] = self.members[c][np.minimum(pos, len(self.members[c]) - 1)]
        return out


def _other_cluster(rng, clusters, n_clusters):
    if n_clusters == 1:
        return np.asarray(clusters)
    shift = rng.integers(1, n_clusters, size=len(clusters))
    return (np.asarray(clusters) + shift) % n_clusters


def _pdp_pairs(rng, n, user_home, cluster_sampler, uniform_sampler, p_intra, n_clusters):
    """Draw ``n`` (user, trigger, clicked) index triples."""
    users = rng.integers(0, len(user_home), size=n)
    home = user_home[users]
    trig = cluster_sampler.draw(rng, home)
    intra = rng.random(n) < p_intra
    clicked = np.empty(n, dtype=np.int64)
    if intra.any():
        clicked[intra] = cluster_sampler.draw(rng, home[intra])
    cross = ~intra
    if cross.any():
        clicked[cross] = uniform_sampler.draw(rng, _other_cluster(rng, home[cross], n_clusters))
    # Redraw self-pairs within the same cluster choice.
    for _ in range(100):
        same = trig == clicked
        if not same.any():
            break
        clicked[same] = cluster_sampler.draw(rng, home[same])
    keep = trig != clicked
    return users[keep], trig[keep], clicked[keep]


def _cover_tail(rng, triples, is_tail, cluster_of, user_home, seed_sampler):
    """Append one pair per tail item the random draws missed, so every tail item shows up."""
    u, b, a = triples
    missing = np.setdiff1d(np.flatnonzero(is_tail), np.union1d(b, a))
    if len(missing) == 0:
        return u, b, a
    c = cluster_of[missing]
    trig = seed_sampler.draw(rng, c)
    users = np.empty(len(missing), dtype=np.int64)
    for i, cl in enumerate(c.tolist()):
        pool = np.flatnonzero(user_home == cl)
        users[i] = pool[rng.integers(len(pool))] if len(pool) else rng.integers(len(user_home))
    return np.concatenate([u, users]), np.concatenate([b, trig]), np.concatenate([a, missing])


def generate_synthetic(spec: SyntheticSpec) -> SyntheticBundle:
    """Generate a deterministic planted-cluster behaviour dataset."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    n, k = spec.n_items, spec.n_clusters
    items = [f"i{j:05d}" for j in range(n)]
    users = [f"u{j:06d}" for j in range(spec.n_users)]

    cluster_of = np.empty(n, dtype=np.int64)
    cluster_of[rng.permutation(n)] = np.arange(n) % k
    members = [np.flatnonzero(cluster_of == c) for c in range(k)]

    # Tail items: exact total via largest-remainder allocation across clusters.
    n_tail = int(round(spec.tail_fraction * n))
    quota = np.array([spec.tail_fraction * len(m) for m in members])
    alloc = np.floor(quota).astype(int)
    for c in np.argsort(-(quota - alloc), kind="stable")[: n_tail - alloc.sum()]:
        alloc[c] += 1
    is_tail = np.zeros(n, dtype=bool)
    for c in range(k):
        is_tail[rng.choice(members[c], size=alloc[c], replace=False)] = True

    pop = np.empty(n)
    for c in range(k):
        ranks = rng.permutation(len(members[c])) + 1
        pop[members[c]] = ranks.astype(float) ** -spec.popularity_exponent

    def sampler(include_tail, uniform=False):
        mem, wts = [], []
        for c in range(k):
            m = members[c] if include_tail else members[c][~is_tail[members[c]]]
            mem.append(m)
            wts.append(np.ones(len(m)) if uniform else pop[m])
        return _Sampler(mem, wts)

    train_pop, train_uni = sampler(False), sampler(False, uniform=True)
    # Newly exposed tail items take the median popularity of their cluster.
    for c in range(k):
        m = members[c]
        pop[m[is_tail[m]]] = np.median(pop[m[~is_tail[m]]])
    all_pop, all_uni = sampler(True), sampler(True, uniform=True)

    user_home = rng.integers(0, k, size=spec.n_users)
    day0 = EPOCH_START
    span = spec.training_days * SECONDS_PER_DAY

    # Training-period clicks: PDP pairs plus non-PDP clicks.
    n_pdp = int(round(spec.n_events * spec.pdp_fraction))
    u, b, a = _pdp_pairs(rng, n_pdp, user_home, train_pop, train_uni, spec.intra_cluster_prob, k)
    n_plain = spec.n_events - len(u)
    pu = rng.integers(0, spec.n_users, size=n_plain)
    pc = np.where(rng.random(n_plain) < spec.intra_cluster_prob, user_home[pu],
                  _other_cluster(rng, user_home[pu], k))
    pa = train_pop.draw(rng, pc)
    ts = day0 + rng.integers(0, span, size=len(u) + n_plain)
    clicks = [ClickEvent(users[x], items[y], items[z], int(t))
              for x, y, z, t in zip(u, b, a, ts[: len(u)])]
    clicks += [ClickEvent(users[x], None, items[z], int(t))
               for x, z, t in zip(pu, pa, ts[len(u):])]

    # Bots: one burst day each, random cross-cluster pairs.
    for s in range(spec.n_spam_users):
        day = day0 + int(rng.integers(0, spec.training_days)) * SECONDS_PER_DAY
        bt = rng.integers(0, n, size=spec.spam_clicks_per_user)
        ba = rng.integers(0, n, size=spec.spam_clicks_per_user)
        bt_ok = ~is_tail[bt] & ~is_tail[ba] & (bt != ba)
        for y, z, t in zip(bt[bt_ok], ba[bt_ok], rng.integers(0, SECONDS_PER_DAY, size=bt_ok.sum())):
            clicks.append(ClickEvent(f"bot{s:03d}", items[y], items[z], int(day + t)))
    clicks.sort(key=lambda e: (e.timestamp, e.user_id, e.trigger_item or "", e.clicked_item))

    # Search sessions: one query per (user, session), 2-4 clicks inside the query's cluster.
    searches = []
    n_search = int(round(spec.n_events * spec.search_fraction))
    while len(searches) < n_search:
        su = int(rng.integers(0, spec.n_users))
        qc = int(user_home[su]) if rng.random() < spec.intra_cluster_prob else int(rng.integers(0, k))
        query = f"kw{qc} term{int(rng.integers(0, 5))}"
        t0 = day0 + int(rng.integers(0, span))
        picks = train_pop.draw(rng, np.full(int(rng.integers(2, 5)), qc))
        for j, it in enumerate(picks):
            searches.append(SearchEvent(users[su], query, items[it], t0 + j))
    searches = searches[:n_search]
    searches.sort(key=lambda e: (e.timestamp, e.user_id, e.query, e.clicked_item))

    # Recent period: all items exposed, PDP pairs only.
    n_recent = int(round(spec.n_events * spec.recent_fraction))
    ru, rb, ra = _pdp_pairs(rng, n_recent, user_home, all_pop, all_uni, spec.intra_cluster_prob, k)
    ru, rb, ra = _cover_tail(rng, (ru, rb, ra), is_tail, cluster_of, user_home, train_pop)
    rts = day0 + span + rng.integers(0, 2 * SECONDS_PER_DAY, size=len(ru))
    recent = sorted(
        (ClickEvent(users[x], items[y], items[z], int(t)) for x, y, z, t in zip(ru, rb, ra, rts)),
        key=lambda e: (e.timestamp, e.user_id, e.trigger_item, e.clicked_item),
    )

    n_future = max(1, int(round(spec.n_events * spec.future_fraction)))
    fu, fb, fa = _pdp_pairs(rng, n_future, user_home, all_pop, all_uni, spec.intra_cluster_prob, k)
    fu, fb, fa = _cover_tail(rng, (fu, fb, fa), is_tail, cluster_of, user_home, train_pop)
    future = [(users[x], items[y], items[z]) for x, y, z in zip(fu, fb, fa)]

    features = _synthetic_features(rng, spec, items, cluster_of)
    return SyntheticBundle(
        clicks=clicks,
        searches=searches,
        recent_clicks=recent,
        future_clicks=future,
        features=features,
        clusters={items[j]: int(cluster_of[j]) for j in range(n)},
        tail_items={items[j] for j in np.flatnonzero(is_tail)},
    )


def _synthetic_features(rng, spec, items, cluster_of):
    k = spec.n_clusters
    brands_per_cluster = 4
    centroids = rng.normal(size=(k, spec.pretrained_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    price_level = rng.uniform(1.0, 3.0, size=k)

    header = ["item", "category:sparse", "brand:sparse", "shop:sparse", "price:dense", "rating:dense"]
    if spec.pretrained_dim:
        header.append("pretrained:pretrained")
    rows = [header]
    for j, item in enumerate(items):
        c = int(cluster_of[j])
        cat_c = c if rng.random() >= spec.feature_noise else int(rng.integers(0, k))
        brand_c = c if rng.random() >= spec.feature_noise else int(rng.integers(0, k))
        row = [
            item,
            f"dept{cat_c % 3}>cat{cat_c}",
            f"b{brand_c}_{int(rng.integers(0, brands_per_cluster))}",
            f"s{int(rng.integers(0, max(1, spec.n_items // 10)))}",
            f"{10 ** (price_level[c] + rng.normal(0, 0.3)):.2f}",
            f"{rng.uniform(3.0, 5.0):.1f}",
        ]
        if spec.pretrained_dim:
            vec = centroids[c] + rng.normal(0, 0.5, size=spec.pretrained_dim) / np.sqrt(spec.pretrained_dim)
            row.append(",".join(f"{x:.6f}" for x in vec))
        rows.append(row)
    return rows


def user_item_clicks(events: Iterable[ClickEvent]) -> dict[str, set[str]]:
    out = defaultdict(set)
    for e in events:
        out[e.user_id].add(e.clicked_item)
    return dict(out)


def click_counts(events: Iterable[ClickEvent], items: Iterable[str] = ()) -> dict[str, int]:
    """Clicks received per item, zero-filled for ``items``."""
    counts = dict.fromkeys(items, 0)
    for e in events:
        counts[e.clicked_item] = counts.get(e.clicked_item, 0) + 1
    return counts


def atomic_write_text(path, text: str):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
