"""Synthetic interaction-log generator with planted channel-specific structure.

Users hold latent topic preferences; items carry topics, tags, authors and
content vectors near their topic centroid. On top of background topical
consumption, three kinds of structure are planted so that heterogeneous
item-to-item channels have genuinely different things to find:

* cliques - item groups co-viewed by many adopters, with same-structure views
  spaced apart in each sequence: visible to co-occurrence mining, invisible
  to short-window sequence embedding, scattered in content space;
* chains - ordered item runs consumed adjacently by each adopter, feeding
  sequence-embedding adjacency;
* micro-clusters - near-duplicate content vectors adopted by one or two
  users each, so only content similarity retrieves the continuation.

The affinity mix redistributes the planted budget across those mechanisms.
Generation is single-threaded and fully determined by (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Interaction, Item, UserHistory
from .errors import ConfigError

DAY_SECONDS = 86400


@dataclass
class GeneratorConfig:
    users: int = 1200
    items: int = 6000
    topics: int = 24
    days: int = 10
    views_per_day: int = 12
    content_dim: int = 16
    min_session: int = 20

    # planted structure
    planted_fraction: float = 0.55
    affinity_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    clique_count: int = 120
    clique_size: int = 8
    cliques_per_user: int = 2
    chain_count: int = 80
    chain_length: int = 15
    chains_per_user: int = 2
    chain_run: int = 3
    micro_count: int = 600
    micro_size: int = 4
    micros_per_user: int = 1
    spacing: int = 6  # min effective-view gap between same-structure views

    # catalog
    authors: int = 400
    tags_per_topic: int = 3
    new_item_fraction: float = 0.1  # background items created mid-horizon

    # watch-time law (lognormal; mean grows with affinity)
    watch_mu: float = 2.2
    watch_affinity_gain: float = 1.2
    watch_sigma: float = 0.8

    start_ts: int = 1_600_000_000

    def validate(self) -> None:
        if self.users <= 0 or self.items <= 0:
            raise ConfigError("users and items must be positive")
        if self.topics <= 0 or self.days <= 0 or self.views_per_day <= 0:
            raise ConfigError("topics, days, views_per_day must be positive")
        planted = (
            self.clique_count * self.clique_size
            + self.chain_count * self.chain_length
            + self.micro_count * self.micro_size
        )
        if planted >= self.items:
            raise ConfigError(
                f"planted structures need {planted} items, catalog has {self.items}"
            )
        if not (0.0 <= self.planted_fraction <= 1.0):
            raise ConfigError("planted_fraction must be in [0, 1]")
        if any(a < 0 for a in self.affinity_mix) or sum(self.affinity_mix) <= 0:
            raise ConfigError("affinity_mix must be nonnegative and sum > 0")

    @property
    def horizon_end(self) -> int:
        return self.start_ts + self.days * DAY_SECONDS


@dataclass
class _Structures:
    cliques: list[list[int]] = field(default_factory=list)
    chains: list[list[int]] = field(default_factory=list)
    micros: list[list[int]] = field(default_factory=list)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate_synthetic_corpus(
    cfg: GeneratorConfig, seed: int
) -> tuple[dict[str, Item], dict[str, UserHistory]]:
    """Build (catalog, histories). Deterministic for a given (cfg, seed)."""
    cfg.validate()
    rng = np.random.default_rng(seed)

    centroids = np.array([_unit(rng.normal(size=cfg.content_dim)) for _ in range(cfg.topics)])

    n_clique = cfg.clique_count * cfg.clique_size
    n_chain = cfg.chain_count * cfg.chain_length
    n_micro = cfg.micro_count * cfg.micro_size
    n_bg = cfg.items - n_clique - n_chain - n_micro

    author_pool = np.arange(cfg.authors)
    authors_by_topic = np.array_split(author_pool, cfg.topics)

    width = len(str(cfg.items - 1))
    item_ids = [f"i{k:0{width}d}" for k in range(cfg.items)]

    def make_item(k: int, topic: int, vec: np.ndarray, created: int) -> Item:
        pool = authors_by_topic[topic]
        author = int(pool[rng.integers(len(pool))]) if len(pool) else 0
        tag = topic * cfg.tags_per_topic + int(rng.integers(cfg.tags_per_topic))
        duration = float(np.clip(math.exp(rng.normal(3.6, 0.5)), 8.0, 600.0))
        return Item(
            item_id=item_ids[k],
            author_id=f"a{author:03d}",
            tag_id=tag,
            duration_seconds=round(duration, 3),
            created_at=created,
            content_vector=vec,
        )

    catalog: dict[str, Item] = {}
    topic_of = np.zeros(cfg.items, dtype=np.int64)
    created_of = np.zeros(cfg.items, dtype=np.int64)
    structures = _Structures()
    pre_horizon = cfg.start_ts - DAY_SECONDS

    k = 0
    bg_by_topic: dict[int, list[int]] = {t: [] for t in range(cfg.topics)}
    for _ in range(n_bg):
        topic = int(rng.integers(cfg.topics))
        created = pre_horizon
        if rng.random() < cfg.new_item_fraction:
            created = int(cfg.start_ts + rng.integers(cfg.days * DAY_SECONDS))
        vec = _unit(centroids[topic] + 0.35 * rng.normal(size=cfg.content_dim))
        catalog[item_ids[k]] = make_item(k, topic, vec, created)
        topic_of[k], created_of[k] = topic, created
        bg_by_topic[topic].append(k)
        k += 1

    for _ in range(cfg.clique_count):
        members = []
        for _ in range(cfg.clique_size):
            topic = int(rng.integers(cfg.topics))
            vec = _unit(centroids[topic] + 0.9 * rng.normal(size=cfg.content_dim))
            catalog[item_ids[k]] = make_item(k, topic, vec, pre_horizon)
            topic_of[k], created_of[k] = topic, pre_horizon
            members.append(k)
            k += 1
        structures.cliques.append(members)

    for _ in range(cfg.chain_count):
        topic = int(rng.integers(cfg.topics))
        members = []
        for _ in range(cfg.chain_length):
            vec = _unit(centroids[topic] + 0.9 * rng.normal(size=cfg.content_dim))
            catalog[item_ids[k]] = make_item(k, topic, vec, pre_horizon)
            topic_of[k], created_of[k] = topic, pre_horizon
            members.append(k)
            k += 1
        structures.chains.append(members)

    for _ in range(cfg.micro_count):
        topic = int(rng.integers(cfg.topics))
        base = _unit(centroids[topic] + 0.5 * rng.normal(size=cfg.content_dim))
        members = []
        for _ in range(cfg.micro_size):
            vec = _unit(base + 0.04 * rng.normal(size=cfg.content_dim))
            catalog[item_ids[k]] = make_item(k, topic, vec, pre_horizon)
            topic_of[k], created_of[k] = topic, pre_horizon
            members.append(k)
            k += 1
        structures.micros.append(members)

    # background popularity inside each topic (a few head items per topic)
    bg_weights: dict[int, np.ndarray] = {}
    for t, members in bg_by_topic.items():
        if members:
            w = rng.dirichlet(np.full(len(members), 0.3))
            bg_weights[t] = np.cumsum(w)

    mix = np.asarray(cfg.affinity_mix, dtype=np.float64)
    mix_cum = np.cumsum(mix / mix.sum())

    uwidth = len(str(cfg.users - 1))
    histories: dict[str, UserHistory] = {}
    duration_of = np.array([catalog[item_ids[i]].duration_seconds for i in range(cfg.items)])

    for u in range(cfg.users):
        user_id = f"u{u:0{uwidth}d}"
        pref_topics = rng.choice(cfg.topics, size=3, replace=False)
        pref_weights = np.sort(rng.dirichlet([2.0, 1.0, 1.0]))[::-1]
        topic_pref = {int(t): float(w) for t, w in zip(pref_topics, pref_weights)}

        my_cliques = [structures.cliques[j] for j in rng.choice(cfg.clique_count, cfg.cliques_per_user, replace=False)]
        my_chains = [structures.chains[j] for j in rng.choice(cfg.chain_count, cfg.chains_per_user, replace=False)]
        my_micros = [structures.micros[j] for j in rng.choice(cfg.micro_count, cfg.micros_per_user, replace=False)]
        chain_ptr = [int(rng.integers(cfg.chain_length)) for _ in my_chains]

        view_count: dict[int, int] = {}
        last_eff: dict[tuple[str, int], int] = {}
        eff_counter = 0
        run_queue: list[int] = []
        rows: list[Interaction] = []

        def pick_spaced(kind: str, groups: list[list[int]]) -> int | None:
            order = rng.permutation(len(groups))
            for gi in order:
                key = (kind, int(gi))
                if eff_counter - last_eff.get(key, -10**9) < cfg.spacing:
                    continue
                members = groups[gi]
                counts = [view_count.get(m, 0) for m in members]
                lo = min(counts)
                cands = [m for m, c in zip(members, counts) if c == lo]
                item = int(cands[rng.integers(len(cands))])
                last_eff[key] = eff_counter
                return item
            return None

        pref_cum = np.cumsum(pref_weights)

        def pick_background(ts: int) -> int:
            for _ in range(12):
                t = int(pref_topics[min(np.searchsorted(pref_cum, rng.random()), len(pref_topics) - 1)])
                members = bg_by_topic[t]
                if not members:
                    continue
                idx = int(np.searchsorted(bg_weights[t], rng.random()))
                item = members[min(idx, len(members) - 1)]
                if created_of[item] <= ts:
                    return item
            # fall back to any pre-horizon background item
            t = int(pref_topics[0])
            for item in bg_by_topic[t]:
                if created_of[item] <= ts:
                    return item
            return 0

        total_views = 0
        for day in range(cfg.days):
            n_views = max(3, int(rng.poisson(cfg.views_per_day)))
            if day == cfg.days - 1:
                n_views = max(n_views, cfg.min_session - total_views)
            ts = cfg.start_ts + day * DAY_SECONDS + int(rng.integers(21600, 72000))
            for _ in range(n_views):
                ts += int(rng.integers(20, 500))
                planted = True
                if run_queue:
                    item = run_queue.pop(0)
                else:
                    item = None
                    if rng.random() < cfg.planted_fraction:
                        fam = min(int(np.searchsorted(mix_cum, rng.random())), 2)
                        if fam == 0 and my_cliques:
                            item = pick_spaced("c", my_cliques)
                        elif fam == 1 and my_chains:
                            ci = int(rng.integers(len(my_chains)))
                            key = ("h", ci)
                            if eff_counter - last_eff.get(key, -10**9) >= cfg.spacing:
                                chain = my_chains[ci]
                                p = chain_ptr[ci]
                                run = [chain[(p + r) % len(chain)] for r in range(cfg.chain_run)]
                                chain_ptr[ci] = (p + cfg.chain_run) % len(chain)
                                last_eff[key] = eff_counter
                                item = run[0]
                                run_queue = run[1:]
                        elif fam == 2 and my_micros:
                            item = pick_spaced("m", my_micros)
                    if item is None:
                        planted = False
                        item = pick_background(ts)

                aff = 0.9 if planted else topic_pref.get(int(topic_of[item]), 0.05)
                watch = math.exp(rng.normal(cfg.watch_mu + cfg.watch_affinity_gain * aff, cfg.watch_sigma))
                watch = float(np.clip(watch, 0.5, duration_of[item]))
                feedback = set()
                if rng.random() < 0.12 * aff:
                    feedback.add("like")
                if rng.random() < 0.02 * aff:
                    feedback.add(("follow", "comment", "share")[int(rng.integers(3))])
                rows.append(
                    Interaction(
                        user_id=user_id,
                        item_id=item_ids[item],
                        timestamp=ts,
                        watch_time_seconds=round(watch, 3),
                        feedback=frozenset(feedback),
                    )
                )
                view_count[item] = view_count.get(item, 0) + 1
                if watch >= 7.0:
                    eff_counter += 1
                total_views += 1

        histories[user_id] = UserHistory(user_id, rows)

    return catalog, histories
