"""Keyed per-period drop sequence generation and conversion to time intervals.

Watermarker and detector both run this module with the same shared key, so
everything past the keystream is integer arithmetic in nanoseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .gilbert import GilbertParams, generate
from .keystream import KeyedStream, stream_create

__all__ = [
    "SharedKey",
    "PeriodConfig",
    "DroppingSchedule",
    "ClockError",
    "sync_dsg",
    "gen_binary_sequence",
    "to_schedule",
    "ScheduleSource",
    "format_schedules",
    "parse_schedules",
]

NS_PER_S = 10**9


class ClockError(ValueError):
    """Raised when a time precedes the schedule epoch."""


def _as_bytes(x) -> bytes:
    return x.encode() if isinstance(x, str) else bytes(x)


@dataclass(frozen=True)
class SharedKey:
    secret_key: bytes
    watermarker_id: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "secret_key", _as_bytes(self.secret_key))
        object.__setattr__(self, "watermarker_id", _as_bytes(self.watermarker_id))
        if not self.combined:
            raise ValueError("shared key must contain at least one byte")

    @property
    def combined(self) -> bytes:
        return self.secret_key + self.watermarker_id


@dataclass(frozen=True)
class PeriodConfig:
    """Timing of the periodic schedule.

    ``period_ns`` and ``t0_ns`` are nanoseconds, ``rate`` is the reference
    throughput in bytes/s and ``packet_size`` the reference packet size (MTU).
    """

    period_ns: int = 60 * NS_PER_S
    t0_ns: int = 0
    rate: float = 500_000.0
    packet_size: int = 1500

    def __post_init__(self):
        if self.period_ns <= 0:
            raise ValueError("period must be positive")
        if self.rate <= 0 or self.packet_size <= 0:
            raise ValueError("rate and packet size must be positive")
        if self.packets_per_period < 1:
            raise ValueError("period holds no packets at this rate")

    @property
    def packets_per_period(self) -> int:
        return math.ceil(Fraction(self.rate) * self.period_ns / (self.packet_size * NS_PER_S))

    @property
    def packet_time_ns(self) -> int:
        return max(1, round(Fraction(self.packet_size * NS_PER_S) / Fraction(self.rate)))

    def period_of(self, t_ns: int) -> int:
        if t_ns < self.t0_ns:
            raise ClockError(f"time {t_ns} precedes epoch {self.t0_ns}")
        return (t_ns - self.t0_ns) // self.period_ns

    def period_start(self, i: int) -> int:
        return self.t0_ns + i * self.period_ns


@dataclass(frozen=True)
class DroppingSchedule:
    period_index: int
    starts: np.ndarray = field(repr=False)
    durations: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.starts, dtype=np.int64)
        e = np.asarray(self.durations, dtype=np.int64)
        if d.shape != e.shape or d.ndim != 1:
            raise ValueError("starts and durations must be 1-D and equal length")
        d.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "starts", d)
        object.__setattr__(self, "durations", e)

    @property
    def K(self) -> int:
        return int(self.starts.size)

    @property
    def ends(self) -> np.ndarray:
        return self.starts + self.durations

    def covered(self, horizon_ns: int | None = None) -> int:
        """Total interval time, optionally clipped to ``[0, horizon_ns)``."""
        if horizon_ns is None:
            return int(self.durations.sum())
        return int(np.clip(np.minimum(self.ends, horizon_ns) - self.starts, 0, None).sum())

    def __eq__(self, other):
        if not isinstance(other, DroppingSchedule):
            return NotImplemented
        return (
            self.period_index == other.period_index
            and np.array_equal(self.starts, other.starts)
            and np.array_equal(self.durations, other.durations)
        )

    def __hash__(self):
        return hash((self.period_index, self.starts.tobytes(), self.durations.tobytes()))


def sync_dsg(key: SharedKey, cfg: PeriodConfig, now_ns: int) -> tuple[KeyedStream, int]:
    """Create the synchronisation stream and fast-forward it to ``now_ns``.

    One draw is discarded per whole period elapsed since the epoch, so the
    next draw from the returned stream seeds the current period ``i``.
    """
    if now_ns < cfg.t0_ns:
        raise ClockError(f"clock {now_ns} is before epoch {cfg.t0_ns}")
    syn = stream_create(key.combined)
    i = (now_ns - cfg.t0_ns) // cfg.period_ns
    t_curr = cfg.t0_ns
    # one discarded draw per elapsed period; stop at the current period start
    while t_curr + cfg.period_ns <= now_ns:
        syn.next_u64()
        t_curr += cfg.period_ns
    return syn, i


def gen_binary_sequence(syn: KeyedStream, params: GilbertParams, N: int) -> np.ndarray:
    """Draw this period's child seed from ``syn`` and emit ``N`` model bits."""
    if N < 1:
        raise ValueError("N must be >= 1")
    raw = syn.next_u64()
    child = stream_create(raw.to_bytes(8, "big"))
    return generate(params, child.uniforms(N))


def to_schedule(bits, packet_time_ns: int, period_index: int = 0) -> DroppingSchedule:
    """Turn each run of ones into a dropping interval.

    A run starting at 1-based position ``k`` with length ``m`` gives start
    ``k * dt`` and duration ``m * dt``.
    """
    if packet_time_ns < 1:
        raise ValueError("packet time must be >= 1 ns")
    b = np.asarray(bits, dtype=np.int8)
    padded = np.concatenate(([0], b, [0]))
    edges = np.diff(padded)
    run_start = np.flatnonzero(edges == 1)  # 0-based index of first one
    run_end = np.flatnonzero(edges == -1)
    dt = np.int64(packet_time_ns)
    return DroppingSchedule(period_index, (run_start + 1) * dt, (run_end - run_start) * dt)


class ScheduleSource:
    """Per-period schedules for one (key, timing, model) triple.

    Each schedule is materialised once and cached; ``materialized`` counts
    how many periods have been built.
    """

    def __init__(self, key: SharedKey, cfg: PeriodConfig, params: GilbertParams):
        self.key = key
        self.cfg = cfg
        self.params = params
        self.materialized = 0
        self._cache: dict[int, DroppingSchedule] = {}

    def schedule(self, i: int) -> DroppingSchedule:
        if i < 0:
            raise ClockError(f"period {i} precedes epoch")
        sched = self._cache.get(i)
        if sched is None:
            syn = stream_create(self.key.combined)
            syn.skip(8 * i)
            bits = gen_binary_sequence(syn, self.params, self.cfg.packets_per_period)
            sched = to_schedule(bits, self.cfg.packet_time_ns, i)
            self._cache[i] = sched
            self.materialized += 1
        return sched

    __getitem__ = schedule

    def lookup(self, times_ns) -> tuple[np.ndarray, np.ndarray]:
        """Period index and interval index (-1 if none) for each time."""
        t = np.asarray(times_ns, dtype=np.int64)
        if t.size and t.min() < self.cfg.t0_ns:
            raise ClockError("time precedes epoch")
        rel = t - self.cfg.t0_ns
        period = rel // self.cfg.period_ns
        offset = rel - period * self.cfg.period_ns
        interval = np.full(t.shape, -1, dtype=np.int64)
        for i in np.unique(period):
            sel = period == i
            s = self.schedule(int(i))
            if s.K == 0:
                continue
            off = offset[sel]
            j = np.searchsorted(s.starts, off, side="right") - 1
            inside = j >= 0
            inside[inside] = off[inside] < s.ends[j[inside]]
            interval[sel] = np.where(inside, j, -1)
        return period, interval

    def drop_mask(self, times_ns) -> np.ndarray:
        """Vectorised dropper: True where a time falls in a dropping interval."""
        return self.lookup(times_ns)[1] >= 0


def format_schedules(schedules: Iterable[DroppingSchedule]) -> str:
    lines = []
    for s in schedules:
        d = ",".join(str(int(x)) for x in s.starts)
        e = ",".join(str(int(x)) for x in s.durations)
        lines.append(f"period={s.period_index} D={d} E={e}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_schedules(text: str) -> list[DroppingSchedule]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        fields = dict(part.split("=", 1) for part in line.split())
        d = [int(x) for x in fields["D"].split(",") if x]
        e = [int(x) for x in fields["E"].split(",") if x]
        out.append(DroppingSchedule(int(fields["period"]), d, e))
    return out
