"""
Watermarking and detecting one exfiltration flow
================================================

A 150 MB upload crosses two stepping stones.  The watermarker sits before
the first one and drops packets inside the keyed intervals.  The relay
retransmits them, which leaves a gap of at least one round trip in the
packet stream that the staging server receives.  The detector looks for
those gaps where the key says they should be.
"""

from dropmark import DetectionConfig, PeriodConfig, PathConfig, SharedKey, detect, flow_decision, packets_to_detect
from dropmark import simulate_exfil_path
from dropmark.harness import TRAINED_ALPHA, TRAINED_WINDOW, default_base_params, scale_params

key = SharedKey(b"demo-secret", b"flow-7")
period = PeriodConfig(60 * 10**9, 0, 500_000.0)
params = scale_params(default_base_params(), 1e-3)
path = PathConfig(flow_bytes=150_000_000, start_ns=12 * 10**9, loss_rate=1e-3)

marked = simulate_exfil_path(path, key, period, params, enable_watermark=True, seed=1)
clean = simulate_exfil_path(path, key, period, params, enable_watermark=False, seed=1)
print("packets at destination: %d" % len(marked.trace.timestamps))
print("dropped by the watermark: %d, by the network: %d" % (marked.watermark_dropped.sum(), marked.apd_dropped.sum()))

# the detector knows the path well enough to predict how late each gap shows up
cfg = DetectionConfig.for_path(path, key, period, params, alpha=TRAINED_ALPHA, window=TRAINED_WINDOW, beta=0.25)
print("expected lag %.1f ms, slack %.1f ms" % (cfg.lag_ns / 1e6, cfg.slack_ns / 1e6))

for label, trace, k in (("watermarked", marked.trace, cfg),
                        ("wrong key", marked.trace, cfg.with_key(SharedKey(b"guess", b"flow-7"))),
                        ("no watermark", clean.trace, cfg)):
    verdicts = detect(trace, k)
    ratio, hit = flow_decision(verdicts, k.beta)
    hits = sum(v.gamma for v in verdicts)
    total = sum(v.K for v in verdicts)
    print("%-13s %4d of %4d intervals with an outlier, ratio %.3f -> %s"
          % (label, hits, total, ratio, "WATERMARKED" if hit else "clean"))

n = packets_to_detect(marked.trace, cfg)
print("\nthe watermark was recognisable after %s packets" % n)
