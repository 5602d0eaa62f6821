"""Heterogeneous item-to-item retrieval channels behind one snapshot interface.

Each channel builds, from an interaction-log prefix, a frozen top-K neighbor
index (an IndexSnapshot). Replay selects the latest snapshot no newer than
tau0 - delta, so offline label construction can never observe post-request
state. Snapshots serialize to a text format whose bytes are a pure function
of the log prefix, which is what the leakage audit checks.
"""

from __future__ import annotations

import zlib
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .corpus import Item, UserHistory, DEFAULT_EFFECTIVE_SECONDS
from .errors import ConfigError, DataFormatError, ReplayUnavailableError

SNAPSHOT_FORMAT = "capts-snapshot-v1"

COOCCURRENCE = "cooccurrence"
EMBEDDING = "embedding"
CONTENT = "content"
DEFAULT_CHANNELS = (COOCCURRENCE, EMBEDDING, CONTENT)

DEFAULT_K_RET = 50
DEFAULT_DELTA_SECONDS = 1200.0


@dataclass
class IndexSnapshot:
    channel: str
    as_of: int
    k_ret: int
    neighbors: dict[str, list[tuple[str, float]]]

    def lookup(self, item_id: str) -> list[tuple[str, float]]:
        return self.neighbors.get(item_id, [])


@dataclass
class ReplayAudit:
    """O(1)-memory record of which snapshots replay consulted."""

    consulted: set[tuple[str, int]] = field(default_factory=set)
    replays: int = 0
    rollback_violations: int = 0

    def record(self, channel: str, as_of: int, tau0: float, delta: float) -> None:
        self.replays += 1
        self.consulted.add((channel, as_of))
        if as_of > tau0 - delta:
            self.rollback_violations += 1


class SnapshotStore:
    """Per-channel, time-ordered immutable snapshots."""

    def __init__(self):
        self._by_channel: dict[str, list[IndexSnapshot]] = {}

    def add(self, snap: IndexSnapshot) -> None:
        seq = self._by_channel.setdefault(snap.channel, [])
        if seq and snap.as_of <= seq[-1].as_of:
            raise ConfigError(
                f"{snap.channel}: snapshot as_of {snap.as_of} not after {seq[-1].as_of}"
            )
        seq.append(snap)

    def channels(self) -> list[str]:
        return sorted(self._by_channel)

    def snapshots(self, channel: str) -> list[IndexSnapshot]:
        return list(self._by_channel.get(channel, []))

    def latest_at(self, channel: str, cutoff: float) -> IndexSnapshot | None:
        """Latest snapshot of `channel` with as_of <= cutoff, or None."""
        seq = self._by_channel.get(channel, [])
        pos = bisect_right([s.as_of for s in seq], cutoff)
        return seq[pos - 1] if pos else None

    def replay(
        self,
        channel: str,
        trigger: str,
        tau0: float,
        delta: float = DEFAULT_DELTA_SECONDS,
        audit: ReplayAudit | None = None,
    ) -> list[tuple[str, float]]:
        """Neighbor list of `trigger` from the latest snapshot at tau0 - delta."""
        snap = self.latest_at(channel, tau0 - delta)
        if snap is None:
            raise ReplayUnavailableError(channel, tau0, delta)
        if audit is not None:
            audit.record(channel, snap.as_of, tau0, delta)
        return snap.lookup(trigger)

    def save(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for channel in self.channels():
            for snap in self._by_channel[channel]:
                path = directory / snapshot_filename(channel, snap.as_of)
                path.write_text(serialize_snapshot(snap))
                paths.append(path)
        return paths

    @classmethod
    def load(cls, directory) -> "SnapshotStore":
        store = cls()
        snaps = [parse_snapshot(p.read_text()) for p in sorted(Path(directory).glob("snapshot-*.tsv"))]
        for snap in sorted(snaps, key=lambda s: (s.channel, s.as_of)):
            store.add(snap)
        return store


def snapshot_filename(channel: str, as_of: int) -> str:
    return f"snapshot-{channel}-{as_of}.tsv"


def serialize_snapshot(snap: IndexSnapshot) -> str:
    lines = [f"#{SNAPSHOT_FORMAT}\t{snap.channel}\t{snap.as_of}\t{snap.k_ret}"]
    for item_id in sorted(snap.neighbors):
        nbrs = snap.neighbors[item_id]
        if not nbrs:
            continue
        pairs = ",".join(f"{n}:{s:.8g}" for n, s in nbrs)
        lines.append(f"{item_id}\t{pairs}")
    return "\n".join(lines) + "\n"


def parse_snapshot(text: str) -> IndexSnapshot:
    lines = text.splitlines()
    head = lines[0].split("\t")
    if len(head) != 4 or head[0] != f"#{SNAPSHOT_FORMAT}":
        raise DataFormatError(f"bad snapshot header: {lines[0]!r}")
    neighbors: dict[str, list[tuple[str, float]]] = {}
    for line in lines[1:]:
        if not line:
            continue
        item_id, pairs = line.split("\t")
        out = []
        for pair in pairs.split(","):
            nbr, score = pair.rsplit(":", 1)
            out.append((nbr, float(score)))
        neighbors[item_id] = out
    return IndexSnapshot(channel=head[1], as_of=int(head[2]), k_ret=int(head[3]), neighbors=neighbors)


def _top_k(scored: dict[int, float], k: int) -> list[tuple[int, float]]:
    return sorted(scored.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


# ---------------------------------------------------------------------------
# Co-occurrence channel (swing-style pair scoring)
# ---------------------------------------------------------------------------

def build_cooccurrence_snapshot(
    histories: dict[str, UserHistory],
    as_of: int,
    k_ret: int = DEFAULT_K_RET,
    alpha: float = 1.0,
    threshold: float = DEFAULT_EFFECTIVE_SECONDS,
    max_viewers_per_item: int = 128,
) -> IndexSnapshot:
    """Pair score(i,j) = sum over user pairs co-viewing i and j of 1/(alpha + |shared items|).

    Computed over effective views with timestamp <= as_of. Hub items keep a
    deterministic crc32-ordered sample of viewers so the pair enumeration
    stays bounded.
    """
    user_items: dict[str, set[str]] = {}
    for user_id in sorted(histories):
        seen = {
            x.item_id
            for x in histories[user_id].interactions
            if x.timestamp <= as_of and x.watch_time_seconds >= threshold
        }
        if seen:
            user_items[user_id] = seen

    users = sorted(user_items)
    uidx = {u: n for n, u in enumerate(users)}
    items = sorted({i for s in user_items.values() for i in s})
    iidx = {i: n for n, i in enumerate(items)}

    viewers: dict[int, list[int]] = defaultdict(list)
    for u in users:
        un = uidx[u]
        for i in user_items[u]:
            viewers[iidx[i]].append(un)

    n_items = len(items)
    pair_shared: dict[int, list[int]] = defaultdict(list)
    n_users = len(users)
    for i, us in viewers.items():
        if len(us) > max_viewers_per_item:
            us = sorted(us, key=lambda un: zlib.crc32(f"{items[i]}|{users[un]}".encode()))
            us = sorted(us[:max_viewers_per_item])
        for u, v in combinations(sorted(us), 2):
            pair_shared[u * n_users + v].append(i)

    scores: dict[int, float] = defaultdict(float)
    for shared in pair_shared.values():
        if len(shared) < 2:
            continue
        w = 1.0 / (alpha + len(shared))
        for i, j in combinations(shared, 2):
            key = i * n_items + j if i < j else j * n_items + i
            scores[key] += w

    per_item: dict[int, dict[int, float]] = defaultdict(dict)
    for key, s in scores.items():
        i, j = divmod(key, n_items)
        per_item[i][j] = s
        per_item[j][i] = s

    neighbors = {
        items[i]: [(items[j], s) for j, s in _top_k(nbrs, k_ret)]
        for i, nbrs in per_item.items()
    }
    return IndexSnapshot(COOCCURRENCE, as_of, k_ret, neighbors)


# ---------------------------------------------------------------------------
# Embedding channel (skip-gram over co-consumption sequences)
# ---------------------------------------------------------------------------

def _sgns_train(
    sequences: list[list[int]],
    n_items: int,
    dim: int,
    epochs: int,
    seed: int,
    window: int,
    negatives: int,
    lr0: float = 0.05,
) -> np.ndarray:
    rng = np.random.default_rng(seed)
    w_in = (rng.random((n_items, dim)) - 0.5) / dim
    w_out = np.zeros((n_items, dim))

    centers, contexts = [], []
    counts = np.zeros(n_items)
    for seq in sequences:
        arr = np.asarray(seq, dtype=np.int64)
        for off in range(1, window + 1):
            if len(arr) > off:
                centers.append(arr[:-off])
                contexts.append(arr[off:])
                centers.append(arr[off:])
                contexts.append(arr[:-off])
        np.add.at(counts, arr, 1.0)
    if not centers:
        return w_in
    centers = np.concatenate(centers)
    contexts = np.concatenate(contexts)

    noise = counts ** 0.75
    noise_cum = np.cumsum(noise / noise.sum())

    n_pairs = len(centers)
    batch = 4096
    total_batches = max(1, epochs * ((n_pairs + batch - 1) // batch))
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        for lo in range(0, n_pairs, batch):
            idx = order[lo : lo + batch]
            c, o = centers[idx], contexts[idx]
            neg = np.searchsorted(noise_cum, rng.random((len(idx), negatives)))
            neg = np.minimum(neg, n_items - 1)
            lr = lr0 * max(1e-3, 1.0 - step / total_batches)
            step += 1

            vc = w_in[c]                       # (B, d)
            uo = w_out[o]                      # (B, d)
            un = w_out[neg]                    # (B, N, d)
            g_pos = _sigmoid(np.sum(vc * uo, axis=1)) - 1.0          # (B,)
            g_neg = _sigmoid(np.einsum("bnd,bd->bn", un, vc))        # (B, N)

            grad_c = g_pos[:, None] * uo + np.einsum("bn,bnd->bd", g_neg, un)
            np.add.at(w_in, c, -lr * grad_c)
            np.add.at(w_out, o, -lr * (g_pos[:, None] * vc))
            np.add.at(w_out, neg.ravel(), -lr * (g_neg[:, :, None] * vc[:, None, :]).reshape(-1, vc.shape[1]))
    return w_in


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def build_embedding_snapshot(
    histories: dict[str, UserHistory],
    as_of: int,
    dim: int = 32,
    epochs: int = 2,
    seed: int = 0,
    k_ret: int = DEFAULT_K_RET,
    window: int = 5,
    negatives: int = 5,
    threshold: float = DEFAULT_EFFECTIVE_SECONDS,
) -> IndexSnapshot:
    """Skip-gram item vectors over per-user effective-view sequences; exact cosine top-K."""
    if dim < 4:
        raise ConfigError("embedding dim must be >= 4")
    sequences_raw: list[list[str]] = []
    for user_id in sorted(histories):
        seq = [
            x.item_id
            for x in histories[user_id].interactions
            if x.timestamp <= as_of and x.watch_time_seconds >= threshold
        ]
        if len(seq) >= 2:
            sequences_raw.append(seq)

    items = sorted({i for seq in sequences_raw for i in seq})
    if len(items) < 2:
        raise ConfigError("embedding channel needs >= 2 distinct items")
    iidx = {i: n for n, i in enumerate(items)}
    sequences = [[iidx[i] for i in seq] for seq in sequences_raw]

    vecs = _sgns_train(sequences, len(items), dim, epochs, seed, window, negatives)
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    vecs = vecs / np.maximum(norms, 1e-12)
    neighbors = _cosine_top_k(vecs, items, k_ret)
    return IndexSnapshot(EMBEDDING, as_of, k_ret, neighbors)


# ---------------------------------------------------------------------------
# Content channel (cosine over catalog vectors)
# ---------------------------------------------------------------------------

def build_content_snapshot(
    catalog: dict[str, Item],
    as_of: int,
    k_ret: int = DEFAULT_K_RET,
) -> IndexSnapshot:
    """Top-K by content-vector cosine among items created at or before as_of."""
    items = sorted(i for i, it in catalog.items() if it.created_at <= as_of)
    if not items:
        return IndexSnapshot(CONTENT, as_of, k_ret, {})
    vecs = np.stack([catalog[i].content_vector for i in items])
    neighbors = _cosine_top_k(vecs, items, k_ret)
    return IndexSnapshot(CONTENT, as_of, k_ret, neighbors)


def _cosine_top_k(
    vecs: np.ndarray, items: list[str], k: int, block: int = 1024
) -> dict[str, list[tuple[str, float]]]:
    """Exact top-k cosine neighbors (self excluded), ties by ascending item id."""
    n = len(items)
    neighbors: dict[str, list[tuple[str, float]]] = {}
    take = min(n - 1, k)
    if take <= 0:
        return {i: [] for i in items}
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        sims = vecs[lo:hi] @ vecs.T
        for r in range(hi - lo):
            row = sims[r]
            row[lo + r] = -np.inf  # exclude self
            if n - 1 > k + 16:
                cand = np.argpartition(row, -(k + 16))[-(k + 16):]
            else:
                cand = np.arange(n)
            ranked = sorted(((items[j], float(row[j])) for j in cand if np.isfinite(row[j])),
                            key=lambda p: (-p[1], p[0]))
            neighbors[items[lo + r]] = ranked[:take]
    return neighbors


# ---------------------------------------------------------------------------
# Builder dispatch (shared by the pipeline and the leakage audit)
# ---------------------------------------------------------------------------

@dataclass
class ChannelBuildConfig:
    k_ret: int = DEFAULT_K_RET
    swing_alpha: float = 1.0
    swing_max_viewers: int = 128
    embedding_dim: int = 32
    embedding_epochs: int = 2
    embedding_window: int = 5
    embedding_negatives: int = 5
    effective_seconds: float = DEFAULT_EFFECTIVE_SECONDS


def build_snapshot(
    channel: str,
    histories: dict[str, UserHistory],
    catalog: dict[str, Item],
    as_of: int,
    cfg: ChannelBuildConfig,
    seed: int,
) -> IndexSnapshot:
    """Build one channel's snapshot from the log prefix at as_of (audit entry point)."""
    if channel == COOCCURRENCE:
        return build_cooccurrence_snapshot(
            histories, as_of, cfg.k_ret, cfg.swing_alpha, cfg.effective_seconds, cfg.swing_max_viewers
        )
    if channel == EMBEDDING:
        return build_embedding_snapshot(
            histories, as_of, cfg.embedding_dim, cfg.embedding_epochs, seed,
            cfg.k_ret, cfg.embedding_window, cfg.embedding_negatives, cfg.effective_seconds,
        )
    if channel == CONTENT:
        return build_content_snapshot(catalog, as_of, cfg.k_ret)
    raise ConfigError(f"unknown channel {channel!r}")


def truncate_histories(histories: dict[str, UserHistory], as_of: int) -> dict[str, UserHistory]:
    """Log prefix: every interaction with timestamp <= as_of."""
    out = {}
    for user_id, h in histories.items():
        rows = [x for x in h.interactions if x.timestamp <= as_of]
        if rows:
            out[user_id] = UserHistory(user_id, rows)
    return out
