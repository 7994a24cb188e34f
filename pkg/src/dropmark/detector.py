"""Watermark detection from interpacket delays observed downstream."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, NamedTuple, TextIO

import numpy as np
from scipy.ndimage import maximum_filter1d

from .dsg import PeriodConfig, ScheduleSource, SharedKey
from .gilbert import GilbertParams
from .netsim import PacketTrace, PathConfig

__all__ = [
    "DetectionConfig",
    "DetectionVerdict",
    "OutlierTimeVector",
    "Ipds",
    "compute_ipds",
    "outlier_mask",
    "find_outliers",
    "outlier_vectors",
    "detect",
    "verdicts_from_outliers",
    "flow_decision",
    "packets_to_detect",
    "write_verdicts",
    "read_verdicts",
]

MS = 1_000_000


@dataclass(frozen=True)
class DetectionConfig:
    """Detector parameters.

    An outlier observed at time ``t`` is matched against interval ``j`` of
    period ``i`` when ``t - lag_ns`` lies in
    ``[T_i + D_j - slack_ns, T_i + D_j + E_j + slack_ns)``.  ``lag_ns``
    is the expected delay between a drop and the inflated gap it causes at
    the capture point; ``slack_ns`` absorbs clock and queueing error.
    """

    key: SharedKey
    period: PeriodConfig
    params: GilbertParams
    alpha: float = 0.8
    window: int = 300
    beta: float = 0.25
    slack_ns: int = 85 * MS
    lag_ns: int = 0
    min_intervals: int = 10

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.slack_ns < 0:
            raise ValueError("slack must be non-negative")
        if self.min_intervals < 1:
            raise ValueError("min_intervals must be >= 1")

    @classmethod
    def for_path(cls, path: PathConfig, key, period, params, margin_ns: int = 5 * MS, **kw) -> "DetectionConfig":
        """Derive lag and slack from the nominal path timing."""
        dt = path.packet_time_ns
        hops = path.stepping_stones
        ser = hops * max(1, round(path.packet_size * 1e9 / path.link_rate))
        lag = path.rtt1_ns // 2 + path.rtt1_ns + (path.dupack_threshold - 1) * dt
        lag += path.downstream_latency_ns + ser
        slack = margin_ns + dt + int(4 * path.jitter_ns * np.sqrt(hops))
        return cls(key, period, params, slack_ns=slack, lag_ns=lag, **kw)

    def with_key(self, key: SharedKey) -> "DetectionConfig":
        return DetectionConfig(key, self.period, self.params, self.alpha, self.window, self.beta,
                               self.slack_ns, self.lag_ns, self.min_intervals)


class Ipds(NamedTuple):
    index: np.ndarray  # 0-based position k of the later packet (k >= 1)
    delay: np.ndarray  # t_k - t_{k-1}, ns
    time: np.ndarray  # t_k, ns


class OutlierTimeVector(NamedTuple):
    period_index: int
    times: np.ndarray  # ns from the period start


@dataclass(frozen=True)
class DetectionVerdict:
    period_index: int
    K: int
    gamma: int
    watermarked: bool
    partial: bool = False

    @property
    def ratio(self) -> float:
        return self.gamma / self.K if self.K else 0.0


def compute_ipds(trace: PacketTrace | Iterable[int]) -> Ipds:
    ts = trace.timestamps if isinstance(trace, PacketTrace) else np.asarray(list(trace), dtype=np.int64)
    ts = np.asarray(ts, dtype=np.int64)
    if ts.size < 2:
        raise ValueError("need at least two packets to compute IPDs")
    delay = np.diff(ts)
    if (delay <= 0).any():
        raise ValueError("timestamps must be strictly increasing")
    return Ipds(np.arange(1, ts.size), delay, ts[1:])


def outlier_mask(delays, alpha: float, window: int) -> np.ndarray:
    """Flag delay ``x_k`` when ``alpha * x_k`` exceeds every other delay within ``window`` positions.

    Windows are truncated at the series ends.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(delays, dtype=np.float64)
    n = x.size
    if n == 0:
        return np.zeros(0, dtype=bool)
    v = int(window)
    pad = np.full(v, -np.inf)
    xp = np.concatenate((pad, x, pad))
    # m[i + v//2] = max(xp[i : i + v])
    m = maximum_filter1d(xp, size=v, mode="constant", cval=-np.inf)
    h = v // 2
    left = m[h : h + n]  # xp[k : k+v] == x[k-v : k]
    right = m[h + v + 1 : h + v + 1 + n]  # x[k+1 : k+v+1]
    return alpha * x > np.maximum(left, right)


def find_outliers(ipds: Ipds, alpha: float, window: int) -> np.ndarray:
    """Observation times (absolute ns) of packets ending an outlier IPD."""
    return ipds.time[outlier_mask(ipds.delay, alpha, window)]


def outlier_vectors(times, cfg: DetectionConfig) -> list[OutlierTimeVector]:
    """Group lag-corrected outlier times by period, relative to each period start."""
    t = np.asarray(times, dtype=np.int64) - cfg.lag_ns
    t = t[t >= cfg.period.t0_ns]
    rel = t - cfg.period.t0_ns
    period = rel // cfg.period.period_ns
    out = []
    for i in np.unique(period):
        sel = period == i
        out.append(OutlierTimeVector(int(i), rel[sel] - int(i) * cfg.period.period_ns))
    return out


def _observable_intervals(source: ScheduleSource, cfg: DetectionConfig, t_first: int, t_last: int):
    """Interval windows (absolute ns) that fit inside the observed span, per period."""
    pc = cfg.period
    lo_t = max(pc.t0_ns, t_first - cfg.lag_ns)
    i0 = pc.period_of(lo_t)
    i1 = pc.period_of(max(pc.t0_ns, t_last - cfg.lag_ns))
    for i in range(i0, i1 + 1):
        s = source.schedule(i)
        base = pc.period_start(i) + cfg.lag_ns
        # intervals starting past the period end never drop anything
        live = s.starts < pc.period_ns
        lo = base + s.starts[live] - cfg.slack_ns
        hi = base + s.ends[live] + cfg.slack_ns
        seen = (lo >= t_first) & (hi <= t_last)
        partial = base < t_first or base + pc.period_ns > t_last
        yield i, lo[seen], hi[seen], partial


def _hits(outlier_times: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    a = np.searchsorted(outlier_times, lo, side="left")
    b = np.searchsorted(outlier_times, hi, side="left")
    return b > a


def verdicts_from_outliers(outlier_times, t_first: int, t_last: int, cfg: DetectionConfig) -> list[DetectionVerdict]:
    """Match outlier times (absolute ns, ascending) against every interval observable in ``[t_first, t_last]``."""
    out_t = np.asarray(outlier_times, dtype=np.int64)
    source = ScheduleSource(cfg.key, cfg.period, cfg.params)
    verdicts = []
    for i, lo, hi, partial in _observable_intervals(source, cfg, t_first, t_last):
        K = int(lo.size)
        gamma = int(_hits(out_t, lo, hi).sum())
        verdicts.append(DetectionVerdict(i, K, gamma, K >= 1 and gamma / K > cfg.beta, partial))
    return verdicts


def detect(trace: PacketTrace, cfg: DetectionConfig) -> list[DetectionVerdict]:
    """Per-period verdicts: gamma / K > beta, with K counting observable intervals."""
    out_t = find_outliers(compute_ipds(trace), cfg.alpha, cfg.window)
    return verdicts_from_outliers(out_t, int(trace.timestamps[0]), int(trace.timestamps[-1]), cfg)


def flow_decision(verdicts: Iterable[DetectionVerdict], beta: float) -> tuple[float, bool]:
    """Pool all periods of a flow into one gamma / K ratio and compare with beta."""
    verdicts = list(verdicts)
    K = sum(v.K for v in verdicts)
    gamma = sum(v.gamma for v in verdicts)
    ratio = gamma / K if K else 0.0
    return ratio, K >= 1 and ratio > beta


def packets_to_detect(trace: PacketTrace, cfg: DetectionConfig, outlier_times=None) -> int | None:
    """Shortest prefix (in packets) after which the flow reads as watermarked.

    Intervals count once their window has closed; the decision needs at
    least ``cfg.min_intervals`` closed intervals and a closed-interval hit
    ratio above ``beta``.  The outlier test's ``window``-packet lookahead is
    added to the prefix length.  ``outlier_times`` overrides the outliers
    found in ``trace``.
    """
    ts = trace.timestamps
    if outlier_times is None:
        out_t = find_outliers(compute_ipds(trace), cfg.alpha, cfg.window)
    else:
        out_t = np.asarray(outlier_times, dtype=np.int64)
    source = ScheduleSource(cfg.key, cfg.period, cfg.params)
    his, hits = [], []
    for _, lo, hi, _ in _observable_intervals(source, cfg, int(ts[0]), int(ts[-1])):
        his.append(hi)
        hits.append(_hits(out_t, lo, hi))
    if not his:
        return None
    hi = np.concatenate(his)
    hit = np.concatenate(hits)
    order = np.argsort(hi, kind="stable")
    hi, hit = hi[order], hit[order]
    K = np.arange(1, hi.size + 1)
    gamma = np.cumsum(hit)
    ok = (K >= cfg.min_intervals) & (gamma > cfg.beta * K)
    if not ok.any():
        return None
    m = int(np.argmax(ok))
    return int(min(len(trace), np.searchsorted(ts, hi[m], side="left") + cfg.window))


VERDICT_FIELDS = ["period", "K", "gamma", "ratio", "watermarked", "partial"]


def write_verdicts(verdicts: Iterable[DetectionVerdict], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(VERDICT_FIELDS)
    for v in verdicts:
        w.writerow([v.period_index, v.K, v.gamma, repr(v.ratio), int(v.watermarked), int(v.partial)])


def read_verdicts(fh: TextIO) -> list[DetectionVerdict]:
    return [
        DetectionVerdict(int(r["period"]), int(r["K"]), int(r["gamma"]), bool(int(r["watermarked"])),
                         bool(int(r["partial"])))
        for r in csv.DictReader(fh)
    ]
