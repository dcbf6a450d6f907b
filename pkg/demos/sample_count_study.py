"""
How many samples does a fit need?
=================================

Tables fitted from very different sample counts are scored on the same
held-out distribution.  The weighted error barely moves.
"""

from dapa.netcheck import sample_sensitivity_study, study_to_csv

rows = sample_sensitivity_study((1000, 10_000, 100_000), (4, 16), trials=3, holdout=200_000,
                                reference_count=None)
for r in rows:
    print(f"{r.sample_count:>7} samples  N={r.segments:<3} mean {r.mean_dwmse:.4e}  var {r.var_dwmse:.2e}")

print(study_to_csv(rows))
