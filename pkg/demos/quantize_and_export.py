"""
Choosing a 16-bit format and exporting coefficients
===================================================

The integer bits follow from the input range.  Fractional bits are added
until the quantized table is within ``theta`` of the float table's
weighted error (or the bit budget runs out).
"""

import numpy as np

from dapa import build_dapa, from_samples
from dapa.quantizer import decode, eval_fixed, export_c_header, quantize_table, select_format

z = np.random.default_rng(1).standard_normal(100_000)
d = from_samples(z, 2048, clip=(-4, 4))
t = build_dapa(d, "gelu-tanh", 16)

sel = select_format(t, d, (-4, 4), theta=1.05)
print("chosen", sel.format, "threshold met:", sel.threshold_met)
for fmt, err in sel.history:
    print(f"  {fmt}  quantized dwmse {err:.3e}")
print("float dwmse", sel.fp32_dwmse)

q = quantize_table(t, sel.format)
print("coefficient formats", {k: str(v) for k, v in q.coeff_formats.items()})

# integer evaluation of a few inputs, decoded back to reals
x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
codes = np.rint(x * 2 ** q.io_format.frac_bits).astype(np.int64)
print("fixed point", decode(q.io_format, eval_fixed(q, codes)))
print("float table", t(x))

header = export_c_header(q)
print("\n".join(header.splitlines()[:14]))
