"""
A single time crystal in mean field
===================================

Start one CTC at (0, 0, m), watch it oscillate at the predicted frequency,
and check that its norm stays put.
"""
import numpy as np

from ctcsync.liouvillian import ModelParams
from ctcsync.meanfield import fixed_points, oscillation_frequency, simulate_single
from ctcsync.sync import dominant_frequencies

params = ModelParams(omega=0.9, kappa=1.0)

# Below m = Omega/kappa the fixed points M1 are centers and the orbit is closed.
for m in (0.1, 0.5, 0.85, 0.95):
    fp = fixed_points(m, params)
    print(f"m={m:4.2f}  {fp.classification:7s}  predicted omega={fp.omega_pred}")

m = 0.1
rec = simulate_single([0.0, 0.0, m], params, t_end=2000.0, dt=0.1)
spec = dominant_frequencies(rec.mz, rec.dt)
print("FFT peak      ", spec.peak[0], "+/-", spec.bin_width)
print("frequency law ", oscillation_frequency(m, params) / (2 * np.pi))
print("norm drift    ", rec.norm_drift[0])

# Above the boundary the orbit spirals into the stable M2 point.
rec = simulate_single([0.0, 0.0, 0.95], params, t_end=200.0)
print("melted final state", rec.states[-1, 0], "expected m_z", -np.sqrt(0.95**2 - 0.81))
