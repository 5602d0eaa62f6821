"""Look-ahead value attribution: per-trigger, per-channel supervision records.

For each (request, trigger, channel) the replayed retrieval is intersected
with the request's future consumption window. The summed watch time on the
intersection is the raw reward; scaling and clipping give a bounded
intensity; thresholding gives the binary value label. A per-trigger
cross-channel uniqueness ratio and label capture complementarity.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Iterable, Sequence

import numpy as np

from .channels import DEFAULT_CHANNELS, DEFAULT_DELTA_SECONDS, ReplayAudit, SnapshotStore
from .corpus import RequestInstance, aggregate_window
from .errors import DataFormatError

logger = logging.getLogger(__name__)

SUPERVISION_FORMAT = "capts-supervision-v1"


@dataclass
class VamConfig:
    window_size: int = 100
    scale: dict[str, float] = field(default_factory=dict)      # s_c, default 100
    cap: dict[str, float] = field(default_factory=dict)        # M_c, default 6
    gamma: dict[str, float] = field(default_factory=dict)      # calibrated if empty
    theta: float = 0.8
    epsilon: float = 1e-6
    target_positive_rate: float = 0.10
    delta_seconds: float = DEFAULT_DELTA_SECONDS

    def scale_for(self, channel: str) -> float:
        return self.scale.get(channel, 100.0)

    def cap_for(self, channel: str) -> float:
        return self.cap.get(channel, 6.0)

    def validate(self, channels: Sequence[str]) -> None:
        for c in channels:
            s, m = self.scale_for(c), self.cap_for(c)
            if s <= 0 or m <= 0:
                raise DataFormatError(f"{c}: scale and cap must be positive")
            g = self.gamma.get(c)
            if g is not None and not (0 <= g <= m):
                raise DataFormatError(f"{c}: gamma {g} outside [0, {m}]")


@dataclass(slots=True)
class SupervisionRecord:
    request_id: str
    trigger: str
    channel: str
    raw_reward: float
    intensity: float
    value_label: int
    uniqueness_ratio: float
    uniqueness_label: int


def raw_reward(retrieved: Iterable[str], window_watch: dict[str, float]) -> float:
    """Sum of window watch time over items retrieved for this trigger.

    Each future item counts once; `window_watch` already aggregates repeated
    window views of the same item.
    """
    return float(sum(window_watch[j] for j in set(retrieved) if j in window_watch))


def intensity_label(reward: float, scale: float, cap: float) -> float:
    return min(cap, max(0.0, reward / scale))


def binary_label(intensity: float, gamma: float) -> int:
    return 1 if intensity >= gamma else 0


def uniqueness(
    retrieved_by_channel: dict[str, Sequence[str]],
    channel: str,
    epsilon: float,
    theta: float,
) -> tuple[float, int]:
    """(uniqueness ratio, label) of one channel's retrieved set vs the others."""
    own = set(retrieved_by_channel[channel])
    others: set[str] = set()
    for c, r in retrieved_by_channel.items():
        if c != channel:
            others.update(r)
    unique = len(own - others)
    rho = unique / (len(own) + epsilon)
    return rho, int(rho > theta)


def records_for_trigger(
    request_id: str,
    trigger: str,
    retrieved_by_channel: dict[str, list[str]],
    window_watch: dict[str, float],
    cfg: VamConfig,
    channels: Sequence[str],
) -> list[SupervisionRecord]:
    """One record per channel for a single (request, trigger)."""
    out = []
    for c in channels:
        r = raw_reward(retrieved_by_channel[c], window_watch)
        ell = intensity_label(r, cfg.scale_for(c), cfg.cap_for(c))
        y = binary_label(ell, cfg.gamma.get(c, 0.0))
        rho, yu = uniqueness(retrieved_by_channel, c, cfg.epsilon, cfg.theta)
        out.append(SupervisionRecord(request_id, trigger, c, r, ell, y, rho, yu))
    return out


@dataclass
class SupervisionResult:
    records: list[SupervisionRecord]
    skipped_requests: int
    gamma: dict[str, float]
    positive_rate: dict[str, float]
    audit: ReplayAudit


def calibrate_gamma(
    intensities: dict[str, np.ndarray], target_rate: float
) -> dict[str, float]:
    """Per-channel threshold aiming at `target_rate` positives.

    Threshold = the target-quantile intensity (descending). If that quantile
    is zero (fewer positives available than the target), fall back to the
    smallest positive intensity so every nonzero reward is positive; a fully
    zero channel gets gamma = +inf surrogate (cap) so labels stay negative.
    """
    gamma: dict[str, float] = {}
    for c, arr in intensities.items():
        if len(arr) == 0:
            gamma[c] = float("inf")
            continue
        k = max(0, min(len(arr) - 1, int(np.floor(target_rate * len(arr)))))
        desc = np.sort(arr)[::-1]
        g = float(desc[k])
        if g <= 0.0:
            positive = arr[arr > 0]
            g = float(positive.min()) if len(positive) else float("inf")
        gamma[c] = g
    return gamma


def build_supervision(
    requests: Sequence[RequestInstance],
    store: SnapshotStore,
    cfg: VamConfig,
    channels: Sequence[str] = DEFAULT_CHANNELS,
) -> SupervisionResult:
    """Replay every (request, eligible trigger, channel) into supervision records.

    Requests without a qualifying snapshot on some channel are skipped and
    counted. When cfg.gamma is empty, thresholds are calibrated on the
    produced records and labels assigned afterwards. Output order is
    (request_id, trigger, channel-roster position).
    """
    cfg.validate(channels)
    audit = ReplayAudit()
    rows: list[SupervisionRecord] = []
    skipped = 0
    for req in sorted(requests, key=lambda r: r.request_id):
        snaps = {c: store.latest_at(c, req.tau0 - cfg.delta_seconds) for c in channels}
        if any(s is None for s in snaps.values()):
            skipped += 1
            continue
        window_watch = aggregate_window(req.future_window)
        for c in channels:
            audit.record(c, snaps[c].as_of, req.tau0, cfg.delta_seconds)
        for trigger in sorted(req.eligible_triggers):
            retrieved = {c: [n for n, _ in snaps[c].lookup(trigger)] for c in channels}
            rows.extend(
                records_for_trigger(req.request_id, trigger, retrieved, window_watch, cfg, channels)
            )

    if not cfg.gamma:
        intensities = {
            c: np.array([r.intensity for r in rows if r.channel == c]) for c in channels
        }
        cfg.gamma = calibrate_gamma(intensities, cfg.target_positive_rate)
        for r in rows:
            r.value_label = binary_label(r.intensity, cfg.gamma[r.channel])

    positive_rate = {}
    for c in channels:
        labels = [r.value_label for r in rows if r.channel == c]
        positive_rate[c] = float(np.mean(labels)) if labels else 0.0
    if skipped:
        logger.info("supervision: skipped %d requests without qualifying snapshots", skipped)
    return SupervisionResult(rows, skipped, dict(cfg.gamma), positive_rate, audit)


# ---------------------------------------------------------------------------
# Supervision file
# ---------------------------------------------------------------------------

def write_supervision(path, result: SupervisionResult, cfg: VamConfig) -> None:
    header = {
        "config": {k: v for k, v in asdict(cfg).items()},
        "skipped_requests": result.skipped_requests,
        "positive_rate": result.positive_rate,
    }
    with open(path, "w") as f:
        f.write(f"#{SUPERVISION_FORMAT}\t{json.dumps(header, sort_keys=True)}\n")
        for r in result.records:
            f.write(
                f"{r.request_id}\t{r.trigger}\t{r.channel}\t{r.raw_reward:.4f}\t"
                f"{r.intensity:.6f}\t{r.value_label}\t{r.uniqueness_ratio:.8f}\t{r.uniqueness_label}\n"
            )


def read_supervision(path) -> tuple[list[SupervisionRecord], VamConfig, dict]:
    with open(path) as f:
        head = f.readline().rstrip("\n").split("\t", 1)
        if head[0] != f"#{SUPERVISION_FORMAT}" or len(head) != 2:
            raise DataFormatError(f"{path}: bad supervision header")
        meta = json.loads(head[1])
        cfg = VamConfig(**meta["config"])
        records = []
        for lineno, line in enumerate(f, start=2):
            p = line.rstrip("\n").split("\t")
            if len(p) != 8:
                raise DataFormatError(f"{path}:{lineno}: expected 8 fields")
            records.append(
                SupervisionRecord(p[0], p[1], p[2], float(p[3]), float(p[4]), int(p[5]), float(p[6]), int(p[7]))
            )
    return records, cfg, meta
