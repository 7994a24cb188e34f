"""
Noise, thresholds and what the flow pays
========================================

A small batch experiment: how detection holds up as the path adds its own
losses, how quickly the watermark is found at different drop rates, and how
much throughput a loss-sensitive sender gives up.
"""

from dropmark import ExperimentPlan, GilbertParams, PathConfig, PeriodConfig, SharedKey, run_plan
from dropmark import simulate_exfil_path
from dropmark.netsim import effective_throughput

# 20 flows per cell keeps this to a minute or so on one core
plan = ExperimentPlan(p_w=(1e-3,), p_l=(0.0, 1e-3, 5e-3), betas=(0.25, 0.35), trials=20, seed=5)
report = run_plan(plan)
print("p_L     beta   TP    FP(wrong key)  FP(no watermark)")
for c in report.cells:
    print("%.0e  %.2f  %.2f   %.2f           %.2f" % (c.p_l, c.beta, c.tp_rate, c.fp_wrong_key, c.fp_no_watermark))

# a stronger watermark is found sooner
speed = run_plan(ExperimentPlan(p_w=(0.5e-3, 2e-3), trials=10, seed=6))
for c in speed.cells:
    print("p_W %.1e: detected after %.0f packets on average" % (c.p_w, c.mean_packets_to_detect))

# a sender that halves its rate on loss slows down as the loss rate grows
zero = GilbertParams.bernoulli(0.0, 4)
print("\nloss     throughput")
for loss in (0.0, 1e-4, 1e-3, 1e-2):
    cfg = PathConfig(loss_rate=loss, loss_response=True)
    res = simulate_exfil_path(cfg, SharedKey(b"demo"), PeriodConfig(), zero, False, 0)
    print("%.0e    %.3f MB/s" % (loss, effective_throughput(res.trace) / 1e6))
