"""
Liouvillian spectra across spin sectors
=======================================

The symmetric sector keeps a finite gap at Omega/kappa = 0.9, while the
full space has a slow oscillating mode whose decay rate falls like 1/N.
"""
from ctcsync.liouvillian import ModelParams, dominant_over_space, fit_inverse_n

params = ModelParams(0.9, 1.0)

sym = dominant_over_space(10, params, symmetric_only=True)
full = dominant_over_space(10, params)
print("N=10 symmetric sector: lambda1 =", sym.lambda1)
print("N=10 all sectors:      lambda1 =", full.lambda1, "from J =", full.dominant_j)

sizes = list(range(10, 25, 2))
re = []
for n in sizes:
    lam = dominant_over_space(n, params).lambda1
    re.append(lam.real)
    print(f"N={n:3d}  Re={lam.real:+.5f}  Im={lam.imag:.5f}")

fit = fit_inverse_n(sizes, re)
print("Re lambda1 = {slope:.3f}/N + {intercept:.4f}   R^2 = {r2:.5f}".format(**fit))
