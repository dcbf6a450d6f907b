"""Behavioural model of the lookup/MAC activation pipeline.

Stages ``1 .. log2(N)`` form a balanced comparator tree over the interior
knot codes; each stage emits one bit of the segment index, MSB first.  The
last stage reads ``(a_n, b_n)`` from the coefficient LUT and performs one
multiply-accumulate.  Integer arithmetic here is scalar Python ``int`` and
deliberately does not reuse :func:`dapa.quantizer.eval_fixed`, so the two
can be checked against each other.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .fitter import is_power_of_two
from .quantizer import QuantizedTable

ACC_BITS = 32


@dataclass(frozen=True)
class PipelineTrace:
    input_code: int
    comparator_bits: Tuple[int, ...]
    selected_segment: int
    coeff_codes: Tuple[int, int]
    output_code: int
    stage_count: int

    def bits_str(self) -> str:
        return "".join(str(b) for b in self.comparator_bits)

    def to_line(self) -> str:
        return f"{self.input_code}\t{self.bits_str()}\t{self.selected_segment}\t{self.output_code}"


def pipeline_depth(n_segments: int) -> int:
    """Comparator stages plus the MAC stage: ``log2(N) + 1``."""
    if not (is_power_of_two(n_segments) and n_segments >= 2):
        raise ValueError(f"segment count must be a power of two >= 2, got {n_segments!r}")
    return int(n_segments).bit_length()


def _rne_shift(v: int, s: int) -> int:
    if s <= 0:
        return v << -s
    q, r = divmod(v, 1 << s)
    half = 1 << (s - 1)
    if r > half or (r == half and q & 1):
        q += 1
    return q


def _saturate(v: int, lo: int, hi: int) -> int:
    return lo if v < lo else hi if v > hi else v


def comparator_tree(knot_codes: Sequence[int], x_code: int) -> List[int]:
    """Walk the balanced tree; bit ``1`` means ``x >= knot`` (take the upper half)."""
    n = len(knot_codes) - 1
    base = 0
    bits = []
    step = n >> 1
    while step:
        bit = int(x_code >= knot_codes[base + step])
        if bit:
            base += step
        bits.append(bit)
        step >>= 1
    return bits


def simulate_lookup(q: QuantizedTable, x_code: int, derivative: bool = False) -> PipelineTrace:
    io = q.io_format
    x_code = int(x_code)
    if not io.min_code <= x_code <= io.max_code:
        raise ValueError(f"input code {x_code} out of range for {io}")
    knots = [int(k) for k in q.knots_q]
    bits = comparator_tree(knots, x_code)
    seg = 0
    for b in bits:
        seg = (seg << 1) | b
    lut = q.deriv_q if derivative else q.fwd_q
    a, b = int(lut[seg, 0]), int(lut[seg, 1])
    fa = q.coeff_formats["da" if derivative else "a"].frac_bits
    fb = q.coeff_formats["db" if derivative else "b"].frac_bits
    n = io.frac_bits
    # MAC: align the intercept to the product's binary point (or vice versa)
    point = max(fa + n, fb)
    acc = (a * x_code << (point - fa - n)) + (b << (point - fb))
    y = _saturate(_rne_shift(acc, point - n), io.min_code, io.max_code)
    return PipelineTrace(x_code, tuple(bits), seg, (a, b), y, len(bits) + 1)


def sweep(q: QuantizedTable, codes=None, derivative: bool = False) -> List[PipelineTrace]:
    """Trace every code of the I/O format (or just ``codes``)."""
    if codes is None:
        codes = range(q.io_format.min_code, q.io_format.max_code + 1)
    return [simulate_lookup(q, c, derivative) for c in codes]


def count_mismatches(q: QuantizedTable, derivative: bool = False) -> int:
    """Exhaustive comparison of the pipeline model with the vectorised evaluator."""
    from .quantizer import eval_fixed

    codes = q.io_format.codes()
    expect = eval_fixed(q, codes, derivative)
    got = np.fromiter((t.output_code for t in sweep(q, codes.tolist(), derivative)),
                      dtype=np.int64, count=codes.size)
    return int(np.count_nonzero(got != expect))


def write_trace(traces, path) -> None:
    """One tab-separated line per code: code, bits (MSB first), segment, output."""
    Path(path).write_text("".join(t.to_line() + "\n" for t in traces), encoding="utf-8")


def softmax_unit(q_exp: QuantizedTable, v_codes: Sequence[int]) -> List[int]:
    """Fixed-point softmax built around the exponential lookup pipeline.

    Inputs and outputs are codes in ``q_exp.io_format``.  The max is
    subtracted with saturation, each difference goes through the exp
    pipeline (negative outputs clamp to zero), the results are summed in a
    32-bit accumulator, and each term is divided by the sum with
    round-half-even integer division at double width.
    """
    v = [int(c) for c in v_codes]
    if not v:
        raise ValueError("softmax of an empty vector")
    io = q_exp.io_format
    for c in v:
        if not io.min_code <= c <= io.max_code:
            raise ValueError(f"input code {c} out of range for {io}")
    top = max(v)
    exps = []
    for c in v:
        shifted = _saturate(c - top, io.min_code, io.max_code)
        exps.append(max(0, simulate_lookup(q_exp, shifted).output_code))
    acc = 0
    acc_max = (1 << (ACC_BITS - 1)) - 1
    for e in exps:
        acc += e
        if acc > acc_max:
            raise OverflowError(
                f"softmax accumulator overflow: {ACC_BITS}-bit sum supports at most "
                f"{acc_max // max(io.max_code, 1)} elements at full scale, got {len(v)}"
            )
    if acc == 0:
        raise ZeroDivisionError("all exponentials underflowed to zero")
    n = io.frac_bits
    out = []
    for e in exps:
        quo, rem = divmod(e << n, acc)
        if 2 * rem > acc or (2 * rem == acc and quo & 1):
            quo += 1
        out.append(_saturate(quo, io.min_code, io.max_code))
    return out
