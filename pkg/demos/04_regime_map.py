"""
A coarse coupling/detuning map
==============================

Two Gaussian ensembles of CTCs on a small (gamma, delta) grid. Each point
gets its own directory under ``regime_map/``; rerunning skips finished
points. Set CTCSYNC_WORKERS to use more processes.
"""
import numpy as np

from ctcsync.sweep import SweepPlan, run_grid

plan = SweepPlan(gamma=[0.2, 0.8, 1.4], delta=[0.1, 0.4, 0.7], n=40, t_end=600.0,
                 window=[200.0, 600.0], name="coarse")
result = run_grid(plan, "regime_map")

print("regimes (rows: gamma, columns: delta)")
for gamma, row in zip(plan.gamma, result["regimes"]):
    print(f"{gamma:4.1f}", "  ".join(f"{r:33s}" for r in row))
print("mean Pearson\n", np.round(result["mean_pearson"], 3))
print("largest Lyapunov exponent\n", np.round(result["lyapunov"], 4))
