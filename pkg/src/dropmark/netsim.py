"""Discrete-event models of a lossy bottleneck and of the exfiltration path.

Two simulations live here:

* :func:`simulate_bottleneck` -- a finite FIFO buffer fed by Poisson, periodic
  or on-off traffic; its per-arrival loss vector is the "natural" loss
  process the drop model is fitted to.
* :func:`simulate_exfil_path` -- sender -> watermarker -> additional packet
  dropper -> chain of transport-layer stepping stones -> destination.  The
  first stepping stone repairs every hole with a fast retransmit and then
  releases its buffered data in order, which is what turns a drop into an
  inflated interpacket delay downstream.

All times inside the path model are integer nanoseconds.
"""

from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, TextIO

import numpy as np

from .dsg import NS_PER_S, PeriodConfig, ScheduleSource, SharedKey
from .embedder import DropDecision
from .gilbert import GilbertParams

__all__ = [
    "BottleneckConfig",
    "BottleneckRun",
    "run_bottleneck",
    "simulate_bottleneck",
    "PathConfig",
    "PacketTrace",
    "DecisionLog",
    "ExfilResult",
    "simulate_exfil_path",
    "effective_throughput",
    "write_loss_vector",
    "read_loss_vector",
]

MS = 1_000_000


# --------------------------------------------------------------------------
# Bottleneck


@dataclass(frozen=True)
class BottleneckConfig:
    """Single FIFO egress queue.

    Rates are bytes/s and durations seconds.  ``buffer_size`` counts packets
    in the system, including the one being transmitted.
    """

    buffer_size: int = 10
    service_rate: float = 12.5e6
    arrival: str = "onoff"  # "poisson" | "periodic" | "onoff"
    arrival_rate: float = 0.95 * 12.5e6
    burst_rate: float = 3.0 * 12.5e6
    idle_rate: float = 0.3 * 12.5e6
    mean_burst: float = 600e-6
    mean_idle: float = 0.9
    packet_sizes: tuple[int, ...] = (1500,)
    size_weights: tuple[float, ...] = (1.0,)
    packets: int = 1_000_000

    def __post_init__(self):
        if self.buffer_size < 1:
            raise ValueError("buffer_size must be >= 1")
        for name in ("service_rate", "arrival_rate", "burst_rate", "idle_rate", "mean_burst", "mean_idle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.arrival not in ("poisson", "periodic", "onoff"):
            raise ValueError(f"unknown arrival process {self.arrival!r}")
        if len(self.packet_sizes) != len(self.size_weights) or not self.packet_sizes:
            raise ValueError("packet_sizes and size_weights must be non-empty and aligned")
        if self.packets < 0:
            raise ValueError("packets must be >= 0")

    @property
    def mean_size(self) -> float:
        w = np.asarray(self.size_weights, float)
        return float(np.dot(self.packet_sizes, w / w.sum()))


@dataclass(frozen=True)
class BottleneckRun:
    losses: np.ndarray = field(repr=False)
    departures: int
    residual: int

    @property
    def arrivals(self) -> int:
        return int(self.losses.size)


def _arrival_times(cfg: BottleneckConfig, rng: np.random.Generator) -> np.ndarray:
    n = cfg.packets
    size = cfg.mean_size
    if cfg.arrival == "periodic":
        return np.arange(n) * (size / cfg.arrival_rate)
    if cfg.arrival == "poisson":
        return np.cumsum(rng.exponential(size / cfg.arrival_rate, n))

    lam_on = cfg.burst_rate / size
    lam_off = cfg.idle_rate / size
    cycle_pkts = lam_on * cfg.mean_burst + lam_off * cfg.mean_idle
    chunks = []
    have = 0
    t = 0.0
    while have < n:
        m = int((n - have) / cycle_pkts * 1.2) + 16
        idle = rng.exponential(cfg.mean_idle, m)
        burst = rng.exponential(cfg.mean_burst, m)
        dur = np.empty(2 * m)
        dur[0::2] = idle
        dur[1::2] = burst
        lam = np.empty(2 * m)
        lam[0::2] = lam_off
        lam[1::2] = lam_on
        starts = t + np.concatenate(([0.0], np.cumsum(dur)[:-1]))
        counts = rng.poisson(lam * dur)
        rep_start = np.repeat(starts, counts)
        rep_dur = np.repeat(dur, counts)
        times = np.sort(rep_start + rng.random(rep_start.size) * rep_dur)
        chunks.append(times)
        have += times.size
        t = starts[-1] + dur[-1]
    return np.concatenate(chunks)[:n]


def run_bottleneck(cfg: BottleneckConfig, seed: int = 0) -> BottleneckRun:
    rng = np.random.default_rng(seed)
    arrivals = _arrival_times(cfg, rng)
    if len(cfg.packet_sizes) == 1:
        service = [cfg.packet_sizes[0] / cfg.service_rate] * arrivals.size
    else:
        w = np.asarray(cfg.size_weights, float)
        sizes = rng.choice(np.asarray(cfg.packet_sizes), size=arrivals.size, p=w / w.sum())
        service = (sizes / cfg.service_rate).tolist()

    z = cfg.buffer_size
    losses = bytearray(arrivals.size)
    queue = deque()  # departure times of packets in the system
    pop, push = queue.popleft, queue.append
    last = 0.0
    departed = 0
    for i, t in enumerate(arrivals.tolist()):
        while queue and queue[0] <= t:
            pop()
            departed += 1
        if len(queue) >= z:
            losses[i] = 1
            continue
        last = (t if t > last else last) + service[i]
        push(last)
    out = np.frombuffer(bytes(losses), dtype=np.int8).copy()
    return BottleneckRun(out, departed, len(queue))


def simulate_bottleneck(cfg: BottleneckConfig, seed: int = 0) -> np.ndarray:
    """Loss vector of the bottleneck: bit 1 for each arrival that found the buffer full."""
    return run_bottleneck(cfg, seed).losses


def write_loss_vector(bits, fh: TextIO) -> None:
    fh.write("".join("1\n" if b else "0\n" for b in np.asarray(bits).tolist()))


def read_loss_vector(fh: TextIO) -> np.ndarray:
    vals = [int(line) for line in fh if line.strip()]
    if any(v not in (0, 1) for v in vals):
        raise ValueError("loss vector must contain only 0/1")
    return np.asarray(vals, dtype=np.int8)


# --------------------------------------------------------------------------
# Exfiltration path


@dataclass(frozen=True)
class PathConfig:
    """Sender, dropper and stepping-stone chain.

    ``rtts_ns[0]`` is the sender <-> first stepping stone round trip; the
    remaining entries are the downstream hops, one per stepping stone.
    """

    rate: float = 500_000.0
    rtts_ns: tuple[int, ...] = (80 * MS, 60 * MS, 40 * MS)
    stepping_stones: int = 2
    dupack_threshold: int = 3
    loss_rate: float = 0.0
    flow_bytes: int = 150_000_000
    packet_size: int = 1500
    start_ns: int = 0
    ramp_ns: int = 2 * NS_PER_S
    ramp_start: float = 0.1
    link_rate: float = 12.5e6
    jitter_ns: float = 0.0
    rto_ns: int = 200 * MS
    loss_response: bool = False
    decrease_factor: float = 0.5
    recovery_ns: int = 500 * MS

    def __post_init__(self):
        rtts = tuple(int(x) for x in np.atleast_1d(self.rtts_ns))
        if len(rtts) == 1:
            rtts = rtts * (self.stepping_stones + 1)
        object.__setattr__(self, "rtts_ns", rtts)
        if self.stepping_stones < 1:
            raise ValueError("need at least one stepping stone")
        if len(rtts) != self.stepping_stones + 1:
            raise ValueError(f"expected {self.stepping_stones + 1} RTTs, got {len(rtts)}")
        if any(r <= 0 for r in rtts):
            raise ValueError("RTTs must be positive")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")
        if self.flow_bytes <= 0:
            raise ValueError("flow is empty")
        if self.rate <= 0 or self.link_rate <= 0 or self.packet_size <= 0:
            raise ValueError("rates and packet size must be positive")
        if self.dupack_threshold < 1:
            raise ValueError("dupack_threshold must be >= 1")
        if not 0.0 < self.ramp_start <= 1.0:
            raise ValueError("ramp_start must lie in (0, 1]")
        if not 0.0 < self.decrease_factor <= 1.0:
            raise ValueError("decrease_factor must lie in (0, 1]")

    @property
    def packets(self) -> int:
        return math.ceil(self.flow_bytes / self.packet_size)

    @property
    def packet_time_ns(self) -> int:
        return max(1, round(self.packet_size * NS_PER_S / self.rate))

    @property
    def rtt1_ns(self) -> int:
        return self.rtts_ns[0]

    @property
    def downstream_latency_ns(self) -> int:
        return sum(r // 2 for r in self.rtts_ns[1:])


class PacketTrace:
    """Packets as observed at a capture point (seq, timestamp ns, size)."""

    def __init__(self, seq, timestamps, sizes):
        self.seq = np.asarray(seq, dtype=np.int64)
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.sizes = np.asarray(sizes, dtype=np.int64)
        if not (self.seq.shape == self.timestamps.shape == self.sizes.shape):
            raise ValueError("trace columns must have equal length")

    def __len__(self):
        return int(self.seq.size)

    def __iter__(self) -> Iterator[tuple[int, int, int]]:
        return zip(self.seq.tolist(), self.timestamps.tolist(), self.sizes.tolist())

    def __getitem__(self, sl):
        if not isinstance(sl, slice):
            raise TypeError("PacketTrace supports slicing only")
        return PacketTrace(self.seq[sl], self.timestamps[sl], self.sizes[sl])

    def __eq__(self, other):
        return (
            isinstance(other, PacketTrace)
            and np.array_equal(self.seq, other.seq)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.sizes, other.sizes)
        )

    @property
    def total_bytes(self) -> int:
        return int(self.sizes.sum())

    def to_csv(self, fh: TextIO) -> None:
        fh.write("seq,timestamp_ns,size_bytes\n")
        fh.writelines(f"{s},{t},{b}\n" for s, t, b in self)

    @classmethod
    def from_csv(cls, fh: TextIO) -> "PacketTrace":
        rows = list(csv.DictReader(fh))
        return cls(
            [int(r["seq"]) for r in rows],
            [int(r["timestamp_ns"]) for r in rows],
            [int(r["size_bytes"]) for r in rows],
        )

    def __repr__(self):
        return f"PacketTrace({len(self)} packets)"


class DecisionLog:
    """Columnar record of every transmission that passed the watermarker."""

    def __init__(self, seq, timestamps, dropped, period, interval):
        self.seq = np.asarray(seq, dtype=np.int64)
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.dropped = np.asarray(dropped, dtype=bool)
        self.period = np.asarray(period, dtype=np.int64)
        self.interval = np.asarray(interval, dtype=np.int64)

    def __len__(self):
        return int(self.seq.size)

    def __iter__(self) -> Iterator[DropDecision]:
        for s, t, d, p, j in zip(
            self.seq.tolist(), self.timestamps.tolist(), self.dropped.tolist(),
            self.period.tolist(), self.interval.tolist(),
        ):
            yield DropDecision(s, t, d, p, j if j >= 0 else None)

    @property
    def drops(self) -> int:
        return int(self.dropped.sum())


class ExfilResult(NamedTuple):
    trace: PacketTrace
    decisions: DecisionLog
    # ground truth for analysis: per-seq flags of first-transmission loss
    watermark_dropped: np.ndarray
    apd_dropped: np.ndarray


def _ramp_times(n: int, cfg: PathConfig) -> np.ndarray:
    """Send offsets (ns) for a linear rate ramp followed by fixed spacing."""
    dt = cfg.packet_time_ns
    L, R = cfg.packet_size, cfg.rate
    tau = cfg.ramp_ns / NS_PER_S
    r0 = cfg.ramp_start
    if tau <= 0 or r0 >= 1.0:
        return np.arange(n, dtype=np.int64) * dt
    ramp_bytes = R * tau * (1.0 + r0) / 2.0
    n_ramp = min(n, int(math.ceil(ramp_bytes / L)))
    b = np.arange(n_ramp) * float(L)
    # solve R*(r0*t + (1-r0)*t^2/(2*tau)) = b for t
    a = R * (1.0 - r0) / (2.0 * tau)
    t = (-R * r0 + np.sqrt((R * r0) ** 2 + 4.0 * a * b)) / (2.0 * a)
    ramp = np.round(t * NS_PER_S).astype(np.int64)
    if n_ramp == n:
        return ramp
    first = max(int(ramp[-1]) + dt, int(math.ceil(tau * NS_PER_S)))
    rest = first + np.arange(n - n_ramp, dtype=np.int64) * dt
    return np.concatenate((ramp, rest))


def _responsive_send(n, cfg, dropper, apd_u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sequential sender whose rate halves on each detected loss and recovers linearly."""
    L = cfg.packet_size
    R = cfg.rate
    rtt1 = cfg.rtt1_ns
    tau = cfg.ramp_ns
    r0 = cfg.ramp_start
    slope = (1.0 - cfg.decrease_factor) * R / cfg.recovery_ns  # bytes/s per ns
    floor = R * 0.01
    send = np.empty(n, dtype=np.int64)
    wm = np.zeros(n, dtype=bool)
    apd = np.zeros(n, dtype=bool)
    events: list[int] = []
    pending: deque = deque()
    received = 0
    t = cfg.start_ns
    cut_rate, cut_time = None, None
    last_cut = -(10**18)
    p_l = cfg.loss_rate

    def rate_at(now):
        if cut_time is not None:
            return min(R, cut_rate + slope * (now - cut_time))
        if tau > 0 and now - cfg.start_ns < tau:
            return R * (r0 + (1 - r0) * (now - cfg.start_ns) / tau)
        return R

    for i in range(n):
        while events and events[0] <= t:
            when = heapq.heappop(events)
            if when - last_cut >= rtt1:
                cut_rate = max(floor, rate_at(when) * cfg.decrease_factor)
                cut_time = when
                last_cut = when
        send[i] = t
        w = dropper(i, t)
        a = apd_u[i] < p_l
        wm[i], apd[i] = w, a
        if w or a:
            pending.append(received + cfg.dupack_threshold)
        else:
            received += 1
            while pending and pending[0] <= received:
                pending.popleft()
                heapq.heappush(events, t + rtt1)
        t += max(1, int(round(L * NS_PER_S / rate_at(t))))
    return send, wm, apd


def _serialize(arrive: np.ndarray, sizes: np.ndarray, link_rate: float) -> np.ndarray:
    """FIFO link departures: d_s = max(a_s, d_{s-1}) + c_s, computed in closed form."""
    c = np.maximum(1, np.round(sizes * NS_PER_S / link_rate)).astype(np.int64)
    C = np.cumsum(c)
    return C + np.maximum.accumulate(arrive - (C - c))


def _strictly_increasing(x: np.ndarray) -> np.ndarray:
    k = np.arange(x.size, dtype=np.int64)
    return np.maximum.accumulate(x - k) + k


def simulate_exfil_path(
    cfg: PathConfig,
    key: SharedKey,
    period_cfg: PeriodConfig,
    params: GilbertParams,
    enable_watermark: bool = True,
    seed: int = 0,
    forced_drops: Iterable[int] = (),
) -> ExfilResult:
    """Run one flow end to end and return the destination trace.

    ``forced_drops`` lists 1-based sequence numbers whose first transmission
    is discarded regardless of the schedule (used for single-loss probes).
    """
    if cfg.start_ns < period_cfg.t0_ns:
        raise ValueError("flow starts before the schedule epoch")
    rng = np.random.default_rng(seed)
    n = cfg.packets
    rtt1 = cfg.rtt1_ns
    d1 = rtt1 // 2
    source = ScheduleSource(key, period_cfg, params)
    forced = np.zeros(n, dtype=bool)
    for s in forced_drops:
        if not 1 <= s <= n:
            raise ValueError(f"forced drop {s} outside flow 1..{n}")
        forced[s - 1] = True

    apd_u = rng.random(n)
    if cfg.loss_response:
        def dropper(i, t):
            return bool(forced[i]) or (enable_watermark and bool(source.drop_mask(np.array([t]))[0]))
        send, wm, apd = _responsive_send(n, cfg, dropper, apd_u)
    else:
        send = cfg.start_ns + _ramp_times(n, cfg)
        wm = source.drop_mask(send) if enable_watermark else np.zeros(n, dtype=bool)
        wm = wm | forced
        apd = apd_u < cfg.loss_rate
    lost = wm | apd

    # first stepping stone: arrival of each packet, repairing holes
    arrive = send + d1
    got = np.flatnonzero(~lost)
    log_seq = [np.arange(n)]
    log_t = [send]
    log_drop = [wm]
    for j in np.flatnonzero(lost).tolist():
        pos = int(np.searchsorted(got, j, side="right")) + cfg.dupack_threshold - 1
        if pos < got.size:
            trigger = int(arrive[got[pos]])
        elif got.size:
            trigger = max(int(arrive[got[-1]]), int(arrive[j])) + cfg.rto_ns
        else:
            trigger = int(arrive[j]) + cfg.rto_ns
        t_re = trigger + d1
        while True:
            w = enable_watermark and bool(source.drop_mask(np.array([t_re]))[0])
            a = rng.random() < cfg.loss_rate
            log_seq.append(np.array([j]))
            log_t.append(np.array([t_re]))
            log_drop.append(np.array([w]))
            if not (w or a):
                break
            t_re += rtt1
        arrive[j] = t_re + d1

    sizes = np.full(n, cfg.packet_size, dtype=np.int64)
    t = arrive
    for hop in range(1, cfg.stepping_stones + 1):
        t = _serialize(t, sizes, cfg.link_rate)
        t = t + cfg.rtts_ns[hop] // 2
        if cfg.jitter_ns > 0:
            t = t + np.round(rng.normal(0.0, cfg.jitter_ns, n)).astype(np.int64)
        t = _strictly_increasing(t)
    trace = PacketTrace(np.arange(1, n + 1), t, sizes)

    seq = np.concatenate(log_seq) + 1
    ts = np.concatenate(log_t)
    dropped = np.concatenate(log_drop)
    if enable_watermark:
        period, interval = source.lookup(ts)
    else:
        period = (ts - period_cfg.t0_ns) // period_cfg.period_ns
        interval = np.full(ts.size, -1, dtype=np.int64)
    # forced drops are not schedule decisions
    interval = np.where(dropped, interval, -1)
    order = np.argsort(ts, kind="stable")
    log = DecisionLog(seq[order], ts[order], dropped[order] & (interval[order] >= 0), period[order], interval[order])
    return ExfilResult(trace, log, wm & ~forced, apd)


def effective_throughput(trace: PacketTrace) -> float:
    """Bytes per second between the first and last captured packet."""
    if len(trace) < 2:
        raise ValueError("need at least two packets to measure throughput")
    span = int(trace.timestamps[-1] - trace.timestamps[0])
    if span <= 0:
        raise ValueError("trace spans no time")
    return trace.total_bytes * NS_PER_S / span
