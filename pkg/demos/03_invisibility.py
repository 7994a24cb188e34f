"""
Can an observer tell watermark drops from congestion?
=====================================================

We capture losses at a busy bottleneck (M), fit the burst-loss model to
them and regenerate a sequence of the same length from the fit (W).  If the
two loss processes cannot be told apart by a two-sample KS test on the
block loss counts, the watermark hides inside ordinary congestion.
"""

import numpy as np

from dropmark.harness import run_invisibility

res = run_invisibility(seed=0, max_lag=20)
print("loss rate  M %.5f   W %.5f" % (res.rate_m, res.rate_w))
print("fitted model:", np.round(res.params.probs, 4))

# loss counts per block of 150 events
print("\n k   f_M(k)    f_W(k)")
for k in range(8):
    print("%2d  %.5f  %.5f" % (k, res.density_m.f[k], res.density_w.f[k]))

print("\nKS distance %.5f against critical value %.5f at 99%%: %s"
      % (res.ks.distance, res.ks.epsilon, "indistinguishable" if res.ks.accepted else "distinguishable"))

# losses at a queue come in bursts, so the loss indicator is correlated across neighbours
print("\n h   rho_M    rho_W")
for h in (1, 2, 3, 5, 10, 20):
    print("%2d  %.4f  %.4f" % (h, res.acf_m.rho[h], res.acf_w.rho[h]))

# repeat with fresh captures to see how often the test accepts
runs = [run_invisibility(seed=s, max_lag=1).ks.accepted for s in range(1, 11)]
print("\naccepted in %d of %d fresh captures" % (sum(runs), len(runs)))
