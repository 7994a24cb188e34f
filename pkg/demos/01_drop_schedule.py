"""
Where the watermark drops packets
=================================

Both ends of the watermark share a secret.  From it they derive, period by
period, a burst-loss sequence and turn its runs of ones into wall-clock
dropping intervals.  Nothing about the intervals is ever sent on the wire.
"""

import numpy as np

from dropmark import GilbertParams, PeriodConfig, ScheduleSource, SharedKey, stationary_drop_rate
from dropmark.harness import default_base_params, scale_params

# a loss model fitted to a congested queue, rescaled to a 0.1% drop rate
base = default_base_params()
params = scale_params(base, 1e-3)
print("fitted model  :", np.round(base.probs, 4))
print("scaled to 1e-3:", np.round(params.probs, 4))
print("stationary rate %.6f" % stationary_drop_rate(params))

# one period is a minute of traffic at 0.5 MB/s of 1500-byte packets
key = SharedKey(b"demo-secret", b"flow-7")
period = PeriodConfig(60 * 10**9, 0, 500_000.0)
src = ScheduleSource(key, period, params)

# bursty losses make the interval count swing from one period to the next
print()
for i in range(6):
    s = src.schedule(i)
    print("period %d: %3d intervals, %6.1f ms of dropping" % (i, s.K, s.durations.sum() / 1e6))

s = src.schedule(3)
print("\nfirst intervals of period 3:")
for d, e in list(zip(s.starts, s.durations))[:5]:
    print("  drop from %9.3f ms for %.3f ms" % (d / 1e6, e / 1e6))

# the same key always gives the same schedule, a different key does not
again = ScheduleSource(key, period, params).schedule(3)
other = ScheduleSource(SharedKey(b"other-secret", b"flow-7"), period, params).schedule(3)
print("\nsame key reproduces  :", again == s)
print("other key reproduces :", other == s)

# a detector joining late seeks straight to the current period
late = src.schedule(42)
print("period 42 has %d intervals" % late.K)

# a memoryless model with the same rate spreads drops out instead of bunching them
flat = ScheduleSource(key, period, GilbertParams.bernoulli(1e-3, 4))
dt = period.packet_time_ns
bursty_len = np.concatenate([src.schedule(i).durations for i in range(20)]).mean() / dt
flat_len = np.concatenate([flat.schedule(i).durations for i in range(20)]).mean() / dt
print("\nmean interval length over 20 periods, bursty %.2f packets, memoryless %.2f packets" % (bursty_len, flat_len))
