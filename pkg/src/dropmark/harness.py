"""Experiment runner: parameter scaling, TP/FP batches, invisibility runs, config files."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import functools
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from . import stats
from .detector import DetectionConfig, detect, flow_decision, packets_to_detect
from .dsg import PeriodConfig, SharedKey
from .gilbert import GilbertParams, estimate_params, generate, stationary_drop_rate
from .netsim import BottleneckConfig, PathConfig, effective_throughput, simulate_bottleneck, simulate_exfil_path

__all__ = [
    "UnreachableRateError",
    "scale_params",
    "default_base_params",
    "ExperimentPlan",
    "TrialRow",
    "CellSummary",
    "ExperimentReport",
    "run_plan",
    "summarize",
    "InvisibilityResult",
    "run_invisibility",
    "TrainingRow",
    "train_detector",
    "load_config",
    "apply_section",
    "TRAINED_WINDOW",
]

# Comparison window picked by `train_detector` on desk-scale traces (see demos/).
TRAINED_WINDOW = 30
TRAINED_ALPHA = 0.6


class UnreachableRateError(ValueError):
    pass


def scale_params(params: GilbertParams, target_rate: float, tol: float = 1e-9) -> GilbertParams:
    """Multiply every drop probability by one factor so the stationary rate hits ``target_rate``.

    The factor is capped at ``1 / max(p)`` so no probability exceeds one.
    """
    if not 0.0 < target_rate < 1.0:
        raise ValueError("target rate must lie in (0, 1)")
    base = stationary_drop_rate(params)
    if base <= 0.0:
        raise UnreachableRateError("base parameters never drop; no scaling reaches a positive rate")
    if abs(base - target_rate) <= tol:
        return params
    f_max = 1.0 / max(params.probs)

    def gap(f):
        return stationary_drop_rate(params.scaled(f)) - target_rate

    top = gap(f_max) + target_rate
    if top < target_rate - tol:
        raise UnreachableRateError(
            f"target {target_rate:g} exceeds the maximum achievable rate {top:.6g} for these parameters"
        )
    if abs(top - target_rate) <= tol:
        return params.scaled(f_max)
    f = brentq(gap, 0.0, f_max, xtol=1e-14, rtol=1e-14, maxiter=500)
    return params.scaled(f)


@functools.lru_cache(maxsize=8)
def default_base_params(seed: int = 0, packets: int = 1_000_000, n: int = 4) -> GilbertParams:
    """Model fitted to the default on-off bottleneck's loss vector."""
    losses = simulate_bottleneck(dataclasses.replace(BottleneckConfig(), packets=packets), seed)
    return estimate_params(losses, n)


# --------------------------------------------------------------------------
# TP / FP experiments


@dataclass(frozen=True)
class ExperimentPlan:
    """Grid of (R, p_W, p_L, beta) cells, each run for ``trials`` flows.

    ``flow_bytes`` defaults to 10^5 packets of 1500 B.  ``period_ns`` is the
    schedule period, ``window``/``alpha`` the detector's outlier test.
    """

    rates: tuple[float, ...] = (500_000.0,)
    p_w: tuple[float, ...] = (1e-3,)
    p_l: tuple[float, ...] = (0.0,)
    betas: tuple[float, ...] = (0.25,)
    trials: int = 10
    flow_bytes: int = 150_000_000
    seed: int = 0
    out_dir: str | None = None
    period_ns: int = 60 * 10**9
    alpha: float = TRAINED_ALPHA
    window: int = TRAINED_WINDOW
    min_intervals: int = 10
    rtts_ns: tuple[int, ...] = (80_000_000, 60_000_000, 40_000_000)
    stepping_stones: int = 2
    jitter_ns: float = 0.0
    workers: int = 1

    def __post_init__(self):
        for name in ("rates", "p_w", "p_l", "betas", "rtts_ns"):
            object.__setattr__(self, name, tuple(np.atleast_1d(getattr(self, name)).tolist()))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if any(r <= 0 for r in self.rates):
            raise ValueError("rates must be positive")
        if any(not 0.0 <= p < 1.0 for p in self.p_w + self.p_l):
            raise ValueError("p_W and p_L must lie in [0, 1)")
        if any(not 0.0 < b < 1.0 for b in self.betas):
            raise ValueError("beta must lie in (0, 1)")
        if self.flow_bytes <= 0:
            raise ValueError("flow_bytes must be positive")

    def cells(self) -> list[tuple[float, float, float, float]]:
        return list(itertools.product(self.rates, self.p_w, self.p_l, self.betas))


@dataclass(frozen=True)
class TrialRow:
    rate: float
    p_w: float
    p_l: float
    beta: float
    trial: int
    kind: str  # "tp" | "no_watermark" | "wrong_key"
    K: int
    gamma: int
    ratio: float
    detected: bool
    packets_to_detect: int | None
    throughput: float
    error: str = ""


@dataclass(frozen=True)
class CellSummary:
    rate: float
    p_w: float
    p_l: float
    beta: float
    trials: int
    tp_rate: float | None
    fp_wrong_key: float | None
    fp_no_watermark: float | None
    mean_packets_to_detect: float | None
    mean_throughput: float | None
    errors: int


TRIAL_FIELDS = [f.name for f in dataclasses.fields(TrialRow)]
REPORT_FIELDS = [f.name for f in dataclasses.fields(CellSummary)]


def _fmt(x) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class ExperimentReport:
    cells: list[CellSummary]
    trials: list[TrialRow] = field(repr=False)

    def write(self, out_dir: str | os.PathLike) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rp, tp = out / "report.csv", out / "trials.csv"
        with open(rp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_FIELDS)
            for c in self.cells:
                w.writerow([_fmt(getattr(c, k)) for k in REPORT_FIELDS])
        with open(tp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRIAL_FIELDS)
            for t in self.trials:
                w.writerow([_fmt(getattr(t, k)) for k in TRIAL_FIELDS])
        return rp, tp

    def cell(self, rate=None, p_w=None, p_l=None, beta=None) -> CellSummary:
        want = dict(rate=rate, p_w=p_w, p_l=p_l, beta=beta)
        hits = [c for c in self.cells if all(v is None or getattr(c, k) == v for k, v in want.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} cells match {want}")
        return hits[0]


def _mean(xs):
    xs = list(xs)
    return float(np.mean(xs)) if xs else None


def summarize(rows: Sequence[TrialRow], cells: Iterable[tuple[float, float, float, float]], trials: int) -> list[CellSummary]:
    """Aggregate trial rows into per-cell rates, in the order of ``cells``."""
    by_cell: dict[tuple, list[TrialRow]] = {}
    for r in rows:
        by_cell.setdefault((r.rate, r.p_w, r.p_l, r.beta), []).append(r)
    out = []
    for cell in cells:
        rs = by_cell.get(cell, [])
        ok = [r for r in rs if not r.error]

        def rate(kind):
            sel = [r.detected for r in ok if r.kind == kind]
            return sum(sel) / len(sel) if sel else None

        hits = [r for r in ok if r.kind == "tp" and r.detected]
        out.append(CellSummary(
            *cell, trials, rate("tp"), rate("wrong_key"), rate("no_watermark"),
            _mean(r.packets_to_detect for r in hits if r.packets_to_detect is not None),
            _mean(r.throughput for r in ok if r.kind in ("tp", "no_watermark")),
            sum(1 for r in rs if r.error),
        ))
    return out


def _trial_seeds(seed: int, idx: tuple[int, ...]) -> tuple[int, int, int, int]:
    ss = np.random.SeedSequence(seed, spawn_key=idx)
    return tuple(int(x) for x in ss.generate_state(4, dtype=np.uint64))


def _flow_rows(job) -> list[TrialRow]:
    """All trial rows (every beta and kind) for one (R, p_W, p_L, trial)."""
    plan, base, rate, pw, pl, trial, idx = job
    s_key, s_start, s_tp, s_nowm = _trial_seeds(plan.seed, idx)
    key = SharedKey(f"key-{s_key:016x}".encode(), b"wm0")
    wrong = SharedKey(f"key-{s_key ^ 0x5A5A5A5A5A5A5A5A:016x}".encode(), b"wm0")
    period = PeriodConfig(plan.period_ns, 0, rate)
    start = int(np.random.default_rng(s_start).integers(0, plan.period_ns))
    path = PathConfig(rate=rate, rtts_ns=plan.rtts_ns, stepping_stones=plan.stepping_stones, loss_rate=pl,
                      flow_bytes=plan.flow_bytes, start_ns=start, jitter_ns=plan.jitter_ns)
    params = scale_params(base, pw) if pw > 0 else base.scaled(0.0)

    runs = []
    if pw > 0:
        runs.append(("tp", simulate_exfil_path(path, key, period, params, True, s_tp).trace, key))
    nowm = simulate_exfil_path(path, key, period, params, False, s_nowm).trace
    runs.append(("no_watermark", nowm, key))
    if pw > 0:
        runs.append(("wrong_key", runs[0][1], wrong))
    else:
        runs.append(("wrong_key", nowm, wrong))

    rows = []
    for beta in plan.betas:
        for kind, trace, dkey in runs:
            cfg = DetectionConfig.for_path(path, dkey, period, params, alpha=plan.alpha, window=plan.window,
                                           beta=beta, min_intervals=plan.min_intervals)
            verdicts = detect(trace, cfg)
            K = sum(v.K for v in verdicts)
            gamma = sum(v.gamma for v in verdicts)
            ratio, hit = flow_decision(verdicts, beta)
            ptd = packets_to_detect(trace, cfg) if kind == "tp" and hit else None
            rows.append(TrialRow(rate, pw, pl, beta, trial, kind, K, gamma, ratio, hit, ptd,
                                 effective_throughput(trace)))
    return rows


def _safe_flow_rows(job) -> list[TrialRow]:
    try:
        return _flow_rows(job)
    except Exception as exc:  # recorded, the cell is aborted by the caller
        plan, _, rate, pw, pl, trial, _ = job
        msg = f"{type(exc).__name__}: {exc}"
        return [TrialRow(rate, pw, pl, b, trial, "error", 0, 0, 0.0, False, None, 0.0, msg) for b in plan.betas]


def run_plan(plan: ExperimentPlan, base_params: GilbertParams | None = None) -> ExperimentReport:
    """Run every cell; results depend only on the plan (including its seed)."""
    base = base_params or default_base_params()
    jobs = []
    for (ri, rate), (wi, pw), (li, pl) in itertools.product(enumerate(plan.rates), enumerate(plan.p_w),
                                                            enumerate(plan.p_l)):
        for t in range(plan.trials):
            jobs.append((plan, base, rate, pw, pl, t, (ri, wi, li, t)))

    if plan.workers > 1:
        with ProcessPoolExecutor(plan.workers) as pool:
            results = list(pool.map(_safe_flow_rows, jobs))
    else:
        results = []
        failed = set()
        for job in jobs:
            cell = job[2:5]
            if cell in failed:
                continue
            res = _safe_flow_rows(job)
            if res[0].error:
                failed.add(cell)
            results.append(res)

    # abort a cell after its first error: drop later trials of that cell
    rows: list[TrialRow] = []
    dead: set[tuple] = set()
    for res in results:
        c = (res[0].rate, res[0].p_w, res[0].p_l)
        if c in dead:
            continue
        if res[0].error:
            dead.add(c)
        rows.extend(res)
    order = {cell: i for i, cell in enumerate(plan.cells())}
    kinds = {"tp": 0, "no_watermark": 1, "wrong_key": 2, "error": 3}
    rows.sort(key=lambda r: (order[(r.rate, r.p_w, r.p_l, r.beta)], r.trial, kinds[r.kind]))
    report = ExperimentReport(summarize(rows, plan.cells(), plan.trials), rows)
    if plan.out_dir:
        report.write(plan.out_dir)
    return report


# --------------------------------------------------------------------------
# Invisibility


@dataclass(frozen=True)
class InvisibilityResult:
    ks: stats.KsResult
    params: GilbertParams
    density_m: stats.LossDensity
    density_w: stats.LossDensity
    acf_m: stats.Acf
    acf_w: stats.Acf
    rate_m: float
    rate_w: float

    def write(self, out_dir: str | os.PathLike) -> None:
        from .gilbert import dumps_params

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, obj, writer in (("density_m.csv", self.density_m, stats.write_density),
                                  ("density_w.csv", self.density_w, stats.write_density),
                                  ("acf_m.csv", self.acf_m, stats.write_acf),
                                  ("acf_w.csv", self.acf_w, stats.write_acf)):
            with open(out / name, "w", newline="") as fh:
                writer(obj, fh)
        (out / "params.txt").write_text(dumps_params(self.params))
        with open(out / "ks.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["distance", "epsilon", "accepted", "rate_m", "rate_w"])
            w.writerow([repr(self.ks.distance), repr(self.ks.epsilon), int(self.ks.accepted),
                        repr(self.rate_m), repr(self.rate_w)])


def run_invisibility(cfg: BottleneckConfig | None = None, n: int = 4, q: int = 150, confidence: float = 0.99,
                     seed: int = 0, max_lag: int = 100) -> InvisibilityResult:
    """Fit the drop model to simulated bottleneck losses, regenerate, and compare.

    Raises :class:`stats.ZeroVarianceError` when the bottleneck never drops.
    """
    cfg = cfg or BottleneckConfig()
    ss = np.random.SeedSequence(seed)
    s_m, s_w = ss.spawn(2)
    bm = simulate_bottleneck(cfg, int(s_m.generate_state(1)[0]))
    acf_m = stats.autocorrelation(bm, max_lag)  # raises on loss-free input
    params = estimate_params(bm, n)
    bw = generate(params, np.random.default_rng(s_w).random(bm.size))
    dm, dw = stats.loss_density(bm, q), stats.loss_density(bw, q)
    ks = stats.ks_test(dw, dm, confidence=confidence)
    acf_w = stats.autocorrelation(bw, max_lag)
    return InvisibilityResult(ks, params, dm, dw, acf_m, acf_w, float(bm.mean()), float(bw.mean()))


# --------------------------------------------------------------------------
# Detector training


@dataclass(frozen=True)
class TrainingRow:
    alpha: float
    window: int
    tp_rate: float
    fp_rate: float
    tp_ratio: float
    fp_ratio: float

    @property
    def score(self) -> float:
        return self.tp_rate - self.fp_rate


def train_detector(
    alphas: Sequence[float] = (0.6, 0.7, 0.8, 0.9),
    windows: Sequence[int] = (10, 30, 100, 300),
    loss_rates: Sequence[float] = (0.0, 1e-3, 5e-3),
    traces: int = 10,
    p_w: float = 1e-3,
    rate: float = 500_000.0,
    beta: float = 0.25,
    packets: int = 100_000,
    seed: int = 12345,
    base_params: GilbertParams | None = None,
    jitters_ns: Sequence[float] = (0.0, 0.5e6, 2e6),
) -> list[TrainingRow]:
    """Grid-search the outlier test on a fresh set of training flows.

    For every (loss rate, jitter) pair, ``traces`` watermarked and ``traces``
    clean flows are simulated.  Rows are sorted best first: score (TP - FP), then the gap
    between mean TP and FP ratios.
    """
    params = scale_params(base_params or default_base_params(), p_w)
    period = PeriodConfig(60 * 10**9, 0, rate)
    flows = []
    for (li, pl), (ji, jit) in itertools.product(enumerate(loss_rates), enumerate(jitters_ns)):
        for t in range(traces):
            s_key, s_start, s_tp, s_nowm = _trial_seeds(seed, (li, ji, t))
            key = SharedKey(f"train-{s_key:016x}".encode())
            start = int(np.random.default_rng(s_start).integers(0, period.period_ns))
            path = PathConfig(rate=rate, loss_rate=pl, flow_bytes=packets * 1500, start_ns=start, jitter_ns=jit)
            tp = simulate_exfil_path(path, key, period, params, True, s_tp).trace
            fp = simulate_exfil_path(path, key, period, params, False, s_nowm).trace
            flows.append((path, key, tp, fp))

    rows = []
    for a, v in itertools.product(alphas, windows):
        tp_r, fp_r = [], []
        for path, key, tp, fp in flows:
            cfg = DetectionConfig.for_path(path, key, period, params, alpha=a, window=int(v), beta=beta)
            tp_r.append(flow_decision(detect(tp, cfg), beta)[0])
            fp_r.append(flow_decision(detect(fp, cfg), beta)[0])
        tp_r, fp_r = np.array(tp_r), np.array(fp_r)
        rows.append(TrainingRow(a, int(v), float((tp_r > beta).mean()), float((fp_r > beta).mean()),
                                float(tp_r.mean()), float(fp_r.mean())))
    rows.sort(key=lambda r: (-r.score, -(r.tp_ratio - r.fp_ratio), r.window))
    return rows


# --------------------------------------------------------------------------
# Config files


def _coerce(text: str, default: Any, name: str):
    text = text.strip()
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(float(text)) if "e" in text.lower() or "." in text else int(text, 0)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [x for x in text.replace(",", " ").split() if x]
        proto = default[0] if default else 0.0
        return tuple(_coerce(x, proto, name) for x in items)
    if isinstance(default, bytes):
        return text.encode()
    return text


def apply_section(obj, section: configparser.SectionProxy | dict[str, str] | None):
    """Return a copy of dataclass ``obj`` with the section's keys applied by field name."""
    if not section:
        return obj
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for k, text in section.items():
        if k not in names:
            raise KeyError(f"unknown setting {k!r} for {type(obj).__name__}")
        cur = getattr(obj, k)
        if cur is None:
            changes[k] = text.strip() or None
        else:
            changes[k] = _coerce(text, cur, k)
    return dataclasses.replace(obj, **changes)


def load_config(path: str | os.PathLike | None) -> configparser.ConfigParser:
    """Read a flat ``key = value`` file with sections; missing path gives an empty config."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    if path is not None:
        with open(path) as fh:
            cp.read_file(fh)
    return cp


def section(cp: configparser.ConfigParser, name: str) -> dict[str, str]:
    return dict(cp[name]) if cp.has_section(name) else {}


def fmt_rate(x: float | None) -> str:
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.3f}"
