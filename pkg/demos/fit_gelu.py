"""
Fitting GELU to a pre-activation distribution
=============================================

Knots sit at equal-mass quantiles of the samples, and each segment is a
weighted least-squares line.  The score that matters is the density-weighted
error, so we compare against a plain uniform-grid fit on the same knots.
"""

import numpy as np

from dapa import approx_report, build_dapa, from_samples
from dapa.fitter import DapaConfig

# a skewed stand-in for GELU inputs collected from an MLP block
rng = np.random.default_rng(0)
z = np.where(rng.random(200_000) < 0.8, rng.normal(-0.4, 0.8, 200_000), rng.normal(1.5, 1.2, 200_000))
d = from_samples(z, bins=2048, clip=(-4, 4))
print("support", d.range, "samples", d.sample_count)
print("median", d.quantile(0.5), " P(z < 0) =", round(d.cdf(0.0), 4))

# 16 segments: each holds about 1/16 of the samples
t = build_dapa(d, "gelu-tanh", 16)
print("knots", np.round(t.knots, 3))
print("segment mass", np.round(t.segment_mass, 4))

# knots are dense where the inputs are, so error is spent where it is cheap
for n in (4, 8, 16, 32, 64):
    r = approx_report(build_dapa(d, "gelu-tanh", n), d)
    print(f"N={n:3d}  mse {r.mse:.3e}  dwmse {r.dwmse:.3e}")

# same knots, lines fitted on an even grid instead of the samples
uniform = build_dapa(d, "gelu-tanh", 16, DapaConfig(weighting="uniform"))
print("dwmse: distribution weights", approx_report(t, d).dwmse, " uniform grid", approx_report(uniform, d).dwmse)

# the derivative table shares the knots and is fitted to the exact derivative
x = np.linspace(-3, 3, 7)
print("gelu'(x) table:", np.round(t(x, derivative=True), 4))
