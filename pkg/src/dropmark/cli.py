"""Command-line entry point: ``dropmark <subcommand> [--config F] [--seed S] [--out DIR]``.

Configuration is an INI file whose sections map onto the library's
dataclasses by field name::

    [key]        secret, id
    [period]     period_ns, t0_ns, rate, packet_size
    [model]      p_w, n, params_file
    [path]       any PathConfig field
    [bottleneck] any BottleneckConfig field
    [detector]   alpha, window, beta, slack_ns, lag_ns, min_intervals
    [experiment] any ExperimentPlan field
    [invis]      n, q, confidence, max_lag
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import harness
from .detector import DetectionConfig, detect, flow_decision, packets_to_detect, write_verdicts
from .dsg import PeriodConfig, ScheduleSource, SharedKey, format_schedules
from .embedder import PacketEvent, run_embedder, write_decisions
from .gilbert import GilbertParams, dumps_params, loads_params
from .netsim import BottleneckConfig, PacketTrace, PathConfig, simulate_exfil_path

log = logging.getLogger("dropmark")

DEFAULT_SECRET = "dropmark-demo-key"
DEFAULT_P_W = 1e-3


class Context:
    """Resolved configuration shared by all subcommands."""

    def __init__(self, args):
        self.args = args
        self.cp = harness.load_config(args.config)
        self.seed = args.seed
        self.out = Path(args.out) if args.out else None

    def sec(self, name):
        return harness.section(self.cp, name)

    @property
    def key(self) -> SharedKey:
        s = self.sec("key")
        secret = self.args.key if getattr(self.args, "key", None) else s.get("secret", DEFAULT_SECRET)
        return SharedKey(secret.encode(), s.get("id", "").encode())

    @property
    def period(self) -> PeriodConfig:
        return harness.apply_section(PeriodConfig(), self.sec("period"))

    @property
    def path(self) -> PathConfig:
        p = harness.apply_section(PathConfig(rate=self.period.rate), self.sec("path"))
        return p

    @property
    def params(self) -> GilbertParams:
        m = self.sec("model")
        if "params_file" in m:
            return loads_params(Path(m["params_file"]).read_text())
        base = harness.default_base_params(n=int(m.get("n", 4)))
        p_w = float(m.get("p_w", DEFAULT_P_W))
        return harness.scale_params(base, p_w) if p_w > 0 else base.scaled(0.0)

    def detection(self, path: PathConfig | None = None) -> DetectionConfig:
        d = {k: v for k, v in self.sec("detector").items()}
        kw = dict(alpha=harness.TRAINED_ALPHA, window=harness.TRAINED_WINDOW)
        cfg = (DetectionConfig.for_path(path, self.key, self.period, self.params, **kw) if path is not None
               else DetectionConfig(self.key, self.period, self.params, **kw))
        return harness.apply_section(cfg, d)

    def open_out(self, name: str):
        if self.out is None:
            return sys.stdout
        self.out.mkdir(parents=True, exist_ok=True)
        return open(self.out / name, "w", newline="")

    def close(self, fh):
        if fh is not sys.stdout:
            fh.close()


def cmd_genseq(ctx: Context) -> int:
    src = ScheduleSource(ctx.key, ctx.period, ctx.params)
    a = ctx.args
    text = format_schedules(src.schedule(i) for i in range(a.first, a.first + a.periods))
    fh = ctx.open_out("schedules.txt")
    fh.write(text)
    ctx.close(fh)
    if ctx.out is not None:
        (ctx.out / "params.txt").write_text(dumps_params(ctx.params))
    return 0


def cmd_embed(ctx: Context) -> int:
    with open(ctx.args.trace) as fh:
        trace = PacketTrace.from_csv(fh)
    events = (PacketEvent(int(s), int(t), int(z)) for s, t, z in trace)
    out = ctx.open_out("decisions.csv")
    n = write_decisions(run_embedder(events, ctx.key, ctx.period, ctx.params, ctx.args.reorder_slack_ns), out)
    ctx.close(out)
    log.info("wrote %d decisions", n)
    return 0


def cmd_simulate(ctx: Context) -> int:
    path = ctx.path
    res = simulate_exfil_path(path, ctx.key, ctx.period, ctx.params, not ctx.args.no_watermark, ctx.seed)
    fh = ctx.open_out("trace.csv")
    res.trace.to_csv(fh)
    ctx.close(fh)
    if ctx.out is not None:
        with open(ctx.out / "decisions.csv", "w", newline="") as fh:
            write_decisions(res.decisions, fh)
    log.info("%d packets, %d watermark drops, %d extra losses", len(res.trace),
             int(res.watermark_dropped.sum()), int(res.apd_dropped.sum()))
    return 0


def cmd_detect(ctx: Context) -> int:
    with open(ctx.args.trace) as fh:
        trace = PacketTrace.from_csv(fh)
    cfg = ctx.detection(ctx.path)
    verdicts = detect(trace, cfg)
    fh = ctx.open_out("verdicts.csv")
    write_verdicts(verdicts, fh)
    ctx.close(fh)
    ratio, hit = flow_decision(verdicts, cfg.beta)
    ptd = packets_to_detect(trace, cfg) if hit else None
    print(f"flow ratio={ratio:.4f} beta={cfg.beta} watermarked={int(hit)} packets_to_detect={ptd}",
          file=sys.stderr)
    return 0 if hit else 3


def cmd_invis(ctx: Context) -> int:
    s = ctx.sec("invis")
    bcfg = harness.apply_section(BottleneckConfig(), ctx.sec("bottleneck"))
    try:
        res = harness.run_invisibility(bcfg, n=int(s.get("n", 4)), q=int(s.get("q", 150)),
                                       confidence=float(s.get("confidence", 0.99)), seed=ctx.seed,
                                       max_lag=int(s.get("max_lag", 100)))
    except harness.stats.ZeroVarianceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if ctx.out is not None:
        res.write(ctx.out)
    print(f"ks distance={res.ks.distance:.6f} epsilon={res.ks.epsilon:.6f} accepted={int(res.ks.accepted)} "
          f"rate_m={res.rate_m:.6f} rate_w={res.rate_w:.6f}")
    return 0 if res.ks.accepted else 1


def cmd_experiment(ctx: Context) -> int:
    plan = harness.apply_section(harness.ExperimentPlan(), ctx.sec("experiment"))
    plan = dataclasses.replace(plan, seed=ctx.seed, out_dir=str(ctx.out) if ctx.out else plan.out_dir)
    report = harness.run_plan(plan)
    fmt = harness.fmt_rate
    for c in report.cells:
        print(f"R={c.rate:g} p_w={c.p_w:g} p_l={c.p_l:g} beta={c.beta:g} tp={fmt(c.tp_rate)} "
              f"fp_wrong_key={fmt(c.fp_wrong_key)} fp_no_wm={fmt(c.fp_no_watermark)} "
              f"packets_to_detect={c.mean_packets_to_detect} errors={c.errors}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, default=0, help="u64 RNG seed for simulations")
    common.add_argument("--out", help="output directory (stdout when omitted, where applicable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dropmark", description="Keyed packet-drop flow watermarking: schedules, simulation, detection, experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("genseq", parents=[common], help="emit dropping schedules for a key")
    g.add_argument("--key", help="shared secret (overrides [key] secret)")
    g.add_argument("--first", type=int, default=0, help="first period index")
    g.add_argument("--periods", type=int, default=1, help="number of periods")
    g.set_defaults(func=cmd_genseq)

    e = sub.add_parser("embed", parents=[common], help="trace CSV in, drop decisions out")
    e.add_argument("trace", help="CSV with seq,timestamp_ns,size_bytes columns")
    e.add_argument("--key", help="shared secret (overrides [key] secret)")
    e.add_argument("--reorder-slack-ns", type=int, default=0, help="tolerated timestamp regression (ns)")
    e.set_defaults(func=cmd_embed)

    s = sub.add_parser("simulate", parents=[common], help="simulate one flow to its destination trace")
    s.add_argument("--key", help="shared secret (overrides [key] secret)")
    s.add_argument("--no-watermark", action="store_true", help="run the same path with the watermarker disabled")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("detect", parents=[common], help="per-period verdicts for a captured trace")
    d.add_argument("trace", help="destination trace CSV")
    d.add_argument("--key", help="shared secret (overrides [key] secret)")
    d.set_defaults(func=cmd_detect)

    i = sub.add_parser("invis", parents=[common], help="fit-and-regenerate invisibility test")
    i.set_defaults(func=cmd_invis)

    x = sub.add_parser("experiment", parents=[common], help="run a TP/FP experiment plan")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        return args.func(Context(args))
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
