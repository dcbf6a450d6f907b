"""
Training with piecewise activations
===================================

Twin networks start from the same weights.  One uses exact GELU, the other
the piecewise forward table and, on the way back, the derivative table.
"""

import numpy as np

from dapa import build_dapa, from_samples
from dapa.netcheck import TrainConfig, grad_report, train_demo

rep = train_demo(TrainConfig(epochs=100, seeds=(0, 1, 2)))
for seed, ex, da in zip(rep.seeds, rep.curves["exact"], rep.curves["dapa"]):
    print(f"seed {seed}: exact {ex[0]:.4f} -> {ex[-1]:.4f}   dapa {da[0]:.4f} -> {da[-1]:.4f}")
print("ratio of mean final losses", rep.mean_final("dapa") / rep.mean_final("exact"))

# the derivative table is compared with the exact derivative, not with the
# slopes of the forward pieces
d = from_samples(np.random.default_rng(4).standard_normal(100_000), 2048, (-4, 4))
for n in (4, 16, 64):
    g = grad_report(build_dapa(d, "gelu", n), (-3, 3), d=d)
    print(f"N={n:3d}  max {g.max_abs_error:.2e}  mean {g.mean_abs_error:.2e}  weighted {g.weighted_mean_abs_error:.2e}")
