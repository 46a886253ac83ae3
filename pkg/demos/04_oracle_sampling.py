"""Reverse sampling driven by the analytic oracle estimator.

The training objective regresses on m_t (Y - X0) + sqrt(delta_t) eps, which
for any latent produced by the forward bridge equals X_t - X0. The oracle
estimator holds the ground-truth target and returns exactly that quantity,
i.e. it behaves like a perfectly trained network. Driving the reverse
sampler with it must therefore reproduce the target volume to rounding
error; this is the sharpest end-to-end check the sampler can face, and it
holds for any number of steps because the deterministic transition is exact
on noiseless bridge trajectories.

The script shows three things:
  1. exact recovery through the per-slice ("naive") sampler,
  2. exact recovery through the aligned sampler (window co-prediction plus
     score-guided correction), with correction diagnostics,
  3. the score closed form: with the exact estimator the score at X is
     -(X - bridge_mean) / delta_t, so an offset of c maps to -c / delta_t.
"""

import numpy as np

from slicebridge import (OracleEstimator, PhantomConfig, SamplerConfig,
                         ScheduleParams, build_schedule, compute_style_key,
                         generate_pair, ista_sample, naive_sample, score)

table = build_schedule(ScheduleParams(T=1000, s=1.0))
source, target = generate_pair(PhantomConfig(size=(16, 16, 16), seed=11))
key = compute_style_key(target)
oracle = OracleEstimator.for_pair(table, target)

print("1. per-slice reverse sampling, oracle-driven:")
for steps in (10, 50, 100):
    out = naive_sample(source, key, SamplerConfig(n_steps=steps), oracle, table)
    err = np.abs(out.data.astype(np.float64)
                 - target.data.astype(np.float64)).max()
    print(f"   {steps:>3} steps: max |error| = {err:.3e}")

print()
print("2. aligned sampling (co-predict + correct), oracle-driven:")
for M in (0, 1, 2):
    diag_cfg = SamplerConfig(n_steps=50, ista=True, M=M)
    out, diag = ista_sample(source, key, diag_cfg, oracle, table)
    err = np.abs(out.data.astype(np.float64)
                 - target.data.astype(np.float64)).max()
    n_corr = len(diag["corrections"])
    print(f"   M={M}: max |error| = {err:.3e}, {n_corr} correction steps")
    if n_corr:
        norms = [c["score_norm_mean"] for c in diag["corrections"]]
        print(f"        score norms stay at rounding level: "
              f"max {max(norms):.3e} (floor guard 1e-12)")

print()
print("3. score closed form at an off-trajectory point:")
t, c = 400, 0.1
m_t, d_t = table.m[t], table.delta[t]
x0 = target.data.astype(np.float64)
y = source.data.astype(np.float64)
x_off = (1 - m_t) * x0 + m_t * y + c
S = score(x_off, source, key, t, oracle)
print(f"   offset c = {c}, predicted score -c/delta_t = {-c / d_t:.6f}")
print(f"   measured score: mean {S.mean():.6f}, spread {S.std():.2e}")
