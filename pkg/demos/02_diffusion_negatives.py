#!/usr/bin/env python3
# Forward diffusion turns a representation into noise along a fixed
# schedule. Synthetic negatives are drawn from intermediate steps, so they
# stay near the data manifold while still being distinct from any sample.

import numpy as np

from hc2.rng import RngStream
from hc2.sampling import build_schedule, diffuse, diffuse_step

schedule = build_schedule(beta_start=1e-4, beta_end=0.02, T=50)
print("alpha_bar: t=1 %.4f  t=10 %.4f  t=50 %.4f"
      % (schedule.alpha_bar[0], schedule.alpha_bar[9], schedule.alpha_bar[49]))

z = np.array([2.0, -1.0, 0.5, 1.5])
rng = RngStream(0, "demo")

print("\nsignal decay of one representation (closed-form draws):")
for t in (1, 5, 10, 25, 50):
    draws = diffuse(np.tile(z, (20000, 1)), t, schedule, rng.substream(f"t{t}"))
    keep = np.sqrt(schedule.alpha_bar[t - 1])
    print(f"  t={t:>2}  signal kept {keep:.3f}  mean[0] {draws[:, 0].mean():+.3f} "
          f"(expect {keep * z[0]:+.3f})  var[0] {draws[:, 0].var():.3f} "
          f"(expect {1 - schedule.alpha_bar[t - 1]:.3f})")

# Chaining single steps reaches the same distribution as the closed form.
x = np.tile(z, (20000, 1))
chain = rng.substream("chain")
for t in range(1, 11):
    x = diffuse_step(x, t, schedule, chain)
print("\nafter 10 chained steps: mean[0] %+.3f  var[0] %.3f"
      % (x[:, 0].mean(), x[:, 0].var()))
print("closed form at t=10:    mean[0] %+.3f  var[0] %.3f"
      % (np.sqrt(schedule.alpha_bar[9]) * z[0], 1 - schedule.alpha_bar[9]))
