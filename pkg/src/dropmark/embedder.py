"""Online dropper: forward or discard each packet according to the schedule."""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, TextIO

from .dsg import ClockError, PeriodConfig, ScheduleSource, SharedKey
from .gilbert import GilbertParams

__all__ = [
    "PacketEvent",
    "DropDecision",
    "OutOfOrderError",
    "decide",
    "Embedder",
    "run_embedder",
    "write_decisions",
    "read_decisions",
]


class OutOfOrderError(ValueError):
    pass


class PacketEvent(NamedTuple):
    seq: int
    timestamp: int  # ns since the schedule epoch
    size: int = 1500


@dataclass(frozen=True)
class DropDecision:
    seq: int
    timestamp: int
    dropped: bool
    period_index: int
    interval_index: int | None = None


def decide(pkt: PacketEvent, source: ScheduleSource) -> DropDecision:
    """Drop iff the packet's offset into its period lies in ``[D_j, D_j + E_j)``."""
    cfg = source.cfg
    if pkt.timestamp < cfg.t0_ns:
        raise ClockError(f"packet {pkt.seq} at {pkt.timestamp} precedes epoch")
    i = cfg.period_of(pkt.timestamp)
    offset = pkt.timestamp - cfg.period_start(i)
    sched = source.schedule(i)
    j = bisect.bisect_right(sched.starts, offset) - 1
    if j >= 0 and offset < sched.starts[j] + sched.durations[j]:
        return DropDecision(pkt.seq, pkt.timestamp, True, i, j)
    return DropDecision(pkt.seq, pkt.timestamp, False, i, None)


class Embedder:
    """Per-flow dropper state.  Schedules are built once, on period entry."""

    def __init__(self, key: SharedKey, cfg: PeriodConfig, params: GilbertParams, reorder_slack_ns: int = 0):
        self.source = ScheduleSource(key, cfg, params)
        self.reorder_slack_ns = reorder_slack_ns
        self._latest: int | None = None

    @property
    def materialized(self) -> int:
        return self.source.materialized

    def __call__(self, pkt: PacketEvent) -> DropDecision:
        if self._latest is not None and pkt.timestamp < self._latest - self.reorder_slack_ns:
            raise OutOfOrderError(
                f"packet {pkt.seq} at {pkt.timestamp} is more than {self.reorder_slack_ns} ns "
                f"behind {self._latest}"
            )
        self._latest = pkt.timestamp if self._latest is None else max(self._latest, pkt.timestamp)
        return decide(pkt, self.source)


def run_embedder(
    events: Iterable[PacketEvent],
    key: SharedKey,
    cfg: PeriodConfig,
    params: GilbertParams,
    reorder_slack_ns: int = 0,
    embedder: Embedder | None = None,
) -> Iterator[DropDecision]:
    emb = embedder or Embedder(key, cfg, params, reorder_slack_ns)
    for ev in events:
        yield emb(PacketEvent(*ev))


DECISION_FIELDS = ["seq", "timestamp_ns", "dropped", "period", "interval"]


def write_decisions(decisions: Iterable[DropDecision], fh: TextIO) -> int:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DECISION_FIELDS)
    count = 0
    for d in decisions:
        w.writerow([
            d.seq,
            d.timestamp,
            int(d.dropped),
            d.period_index,
            "" if d.interval_index is None else d.interval_index,
        ])
        count += 1
    return count


def read_decisions(fh: TextIO) -> list[DropDecision]:
    out = []
    for row in csv.DictReader(fh):
        interval = row["interval"]
        out.append(DropDecision(
            int(row["seq"]),
            int(row["timestamp_ns"]),
            bool(int(row["dropped"])),
            int(row["period"]),
            int(interval) if interval != "" else None,
        ))
    return out
