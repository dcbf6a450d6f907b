"""
The lookup pipeline and a fixed-point softmax
=============================================

A balanced comparator tree turns an input code into a segment index, one
bit per stage, and a single multiply-accumulate finishes the job.  The
softmax unit wraps an exponential table in a max-shift, an accumulator and
a divider.
"""

import numpy as np

from dapa import build_dapa, from_samples, softmax_exact
from dapa.hwmodel import count_mismatches, pipeline_depth, simulate_lookup, softmax_unit
from dapa.quantizer import FixedPointFormat, decode, encode, quantize_table

print("stages for N=8:", pipeline_depth(8), " N=16:", pipeline_depth(16))

z = np.random.default_rng(2).standard_normal(100_000)
d = from_samples(z, 2048, clip=(-4, 4))
q = quantize_table(build_dapa(d, "gelu-tanh", 8), FixedPointFormat(3, 13))

for c in (-20000, int(q.knots_q[4]) - 1, int(q.knots_q[4]), 20000):
    tr = simulate_lookup(q, c)
    print(f"code {c:6d}  bits {tr.bits_str()}  segment {tr.selected_segment}  out {tr.output_code}")

# every one of the 65536 codes agrees with the vectorised evaluator
print("mismatches:", count_mismatches(q))

# exp inputs after max-shifting: all <= 0, one exact zero per vector
v = np.random.default_rng(3).normal(0, 2, (20_000, 16))
shifted = (v - v.max(axis=1, keepdims=True)).ravel()
q_exp = quantize_table(build_dapa(from_samples(shifted, 2048, (-8, 0)), "exp", 16), FixedPointFormat(4, 12))

logits = np.array([1.5, -0.3, 0.2, 2.8, -4.0, 0.0])
codes, _ = encode(q_exp.io_format, logits)
out = decode(q_exp.io_format, softmax_unit(q_exp, codes))
print("fixed  ", np.round(out, 4), "sum", out.sum())
print("exact  ", np.round(softmax_exact(logits), 4))
