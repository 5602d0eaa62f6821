"""Interaction-log data model, effective-view semantics and request anchoring.

An interaction log is a set of per-user, time-ordered consumption events over
a shared item catalog. Request instances anchor an evaluation point inside a
history: everything strictly before tau0 is trigger-eligible, the next
``window_size`` effective views after tau0 form the look-ahead window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError

logger = logging.getLogger(__name__)

EVENTS_FORMAT = "capts-events-v1"
CATALOG_FORMAT = "capts-catalog-v1"

DEFAULT_EFFECTIVE_SECONDS = 7.0

FEEDBACK_FLAGS = ("like", "follow", "comment", "share")


@dataclass(frozen=True)
class Item:
    item_id: str
    author_id: str
    tag_id: int
    duration_seconds: float
    created_at: int
    content_vector: np.ndarray

    def __post_init__(self):
        norm = float(np.linalg.norm(self.content_vector))
        if abs(norm - 1.0) > 1e-6:
            raise DataFormatError(
                f"item {self.item_id}: content vector norm {norm:.8f} != 1"
            )


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    timestamp: int
    watch_time_seconds: float
    feedback: frozenset = frozenset()

    def __post_init__(self):
        if self.watch_time_seconds < 0:
            raise DataFormatError(
                f"negative watch time for {self.user_id}/{self.item_id}"
            )


@dataclass
class UserHistory:
    user_id: str
    interactions: list[Interaction] = field(default_factory=list)

    def check_ordering(self) -> None:
        ts = [x.timestamp for x in self.interactions]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataFormatError(f"history of {self.user_id} not strictly ordered")


@dataclass
class RequestInstance:
    request_id: str
    user_id: str
    tau0: int
    eligible_triggers: list[str]           # most-recent-first, de-duplicated
    future_window: list[tuple[str, float]]  # (item_id, watch_time) of next effective views


def is_effective_view(x: Interaction, threshold: float = DEFAULT_EFFECTIVE_SECONDS) -> bool:
    """True when the view meets the engagement watch-time threshold (inclusive)."""
    return x.watch_time_seconds >= threshold


def effective_views(
    history: UserHistory, threshold: float = DEFAULT_EFFECTIVE_SECONDS
) -> list[Interaction]:
    return [x for x in history.interactions if is_effective_view(x, threshold)]


def build_request_instances(
    history: UserHistory,
    window_size: int,
    stride: int,
    threshold: float = DEFAULT_EFFECTIVE_SECONDS,
) -> list[RequestInstance]:
    """Anchor one request at every ``stride``-th effective view of the history.

    tau0 is the anchor view's timestamp. Eligible triggers are the item ids of
    all interactions strictly before tau0, de-duplicated keeping the most
    recent occurrence, most recent first. The future window holds the next
    ``window_size`` effective views after tau0 (fewer if the history ends).
    """
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    eff = effective_views(history, threshold)
    instances: list[RequestInstance] = []
    for k in range(0, len(eff), stride):
        tau0 = eff[k].timestamp
        window = [
            (x.item_id, x.watch_time_seconds)
            for x in eff[k + 1 : k + 1 + window_size]
        ]
        seen: set[str] = set()
        triggers: list[str] = []
        for x in reversed(history.interactions):
            if x.timestamp >= tau0:
                continue
            if x.item_id not in seen:
                seen.add(x.item_id)
                triggers.append(x.item_id)
        instances.append(
            RequestInstance(
                request_id=f"{history.user_id}@{tau0}",
                user_id=history.user_id,
                tau0=tau0,
                eligible_triggers=triggers,
                future_window=window,
            )
        )
    return instances


def aggregate_window(window: Sequence[tuple[str, float]]) -> dict[str, float]:
    """Total watch time per unique window item (repeats contribute once, summed)."""
    agg: dict[str, float] = {}
    for item_id, watch in window:
        agg[item_id] = agg.get(item_id, 0.0) + watch
    return agg


# ---------------------------------------------------------------------------
# Event-log and catalog files
# ---------------------------------------------------------------------------

def write_events(path, histories: Iterable[UserHistory]) -> int:
    """Write the event log; returns the number of interaction rows."""
    n = 0
    with open(path, "w") as f:
        f.write(f"#{EVENTS_FORMAT}\n")
        for h in histories:
            for x in h.interactions:
                flags = "\t".join("1" if k in x.feedback else "0" for k in FEEDBACK_FLAGS)
                f.write(
                    f"{x.user_id}\t{x.item_id}\t{x.timestamp}\t"
                    f"{x.watch_time_seconds:.3f}\t{flags}\n"
                )
                n += 1
    return n


def read_events(path) -> dict[str, UserHistory]:
    """Read an event log into per-user histories, sorted by (timestamp, item_id).

    Timestamp ties within a user are tolerated on ingestion (broken by
    item_id) but warned about; the generator never produces them.
    """
    by_user: dict[str, list[Interaction]] = {}
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != f"#{EVENTS_FORMAT}":
            raise DataFormatError(f"{path}: expected '#{EVENTS_FORMAT}' header, got {header!r}")
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 8:
                raise DataFormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            user_id, item_id, ts, watch = parts[0], parts[1], parts[2], parts[3]
            feedback = frozenset(
                k for k, v in zip(FEEDBACK_FLAGS, parts[4:8]) if v == "1"
            )
            by_user.setdefault(user_id, []).append(
                Interaction(user_id, item_id, int(ts), float(watch), feedback)
            )
    histories: dict[str, UserHistory] = {}
    for user_id, rows in by_user.items():
        rows.sort(key=lambda x: (x.timestamp, x.item_id))
        ts = [x.timestamp for x in rows]
        if len(set(ts)) != len(ts):
            logger.warning("history of %s has timestamp ties; broke them by item_id", user_id)
        histories[user_id] = UserHistory(user_id, rows)
    return histories


def write_catalog(path, items: Iterable[Item]) -> int:
    n = 0
    with open(path, "w") as f:
        f.write(f"#{CATALOG_FORMAT}\n")
        for it in items:
            vec = ",".join(f"{v:.6f}" for v in it.content_vector)
            f.write(
                f"{it.item_id}\t{it.author_id}\t{it.tag_id}\t"
                f"{it.duration_seconds:.3f}\t{it.created_at}\t{vec}\n"
            )
            n += 1
    return n


def read_catalog(path) -> dict[str, Item]:
    items: dict[str, Item] = {}
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != f"#{CATALOG_FORMAT}":
            raise DataFormatError(f"{path}: expected '#{CATALOG_FORMAT}' header, got {header!r}")
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 6:
                raise DataFormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            vec = np.array([float(v) for v in parts[5].split(",")], dtype=np.float64)
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec = vec / norm  # re-normalize: text round-trip loses a few ulps
            items[parts[0]] = Item(
                item_id=parts[0],
                author_id=parts[1],
                tag_id=int(parts[2]),
                duration_seconds=float(parts[3]),
                created_at=int(parts[4]),
                content_vector=vec,
            )
    return items
