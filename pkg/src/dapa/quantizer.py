"""Signed fixed-point quantization of piecewise tables.

Formats use Q notation: ``Qm.n`` has ``m`` integer bits (sign included) and
``n`` fractional bits, at most 16 bits in total.  Rounding is to nearest with
ties to even; overflow saturates.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .distribution import EmpiricalDistribution
from .fitter import DapaTable, eval_piecewise
from .metrics import density_cells
from .reference import ActivationKind, eval_exact

BIT_MAX = 16
COEFF_WIDTH = 16
DEFAULT_THETA = 1.05
COEFF_KEYS = ("a", "b", "da", "db")


@dataclass(frozen=True, order=True)
class FixedPointFormat:
    int_bits: int
    frac_bits: int

    def __post_init__(self):
        m, n = self.int_bits, self.frac_bits
        if int(m) != m or int(n) != n:
            raise ValueError("format bit counts must be integers")
        if m < 1 or n < 0 or m + n > BIT_MAX:
            raise ValueError(f"invalid format Q{m}.{n}: need m >= 1, n >= 0, m + n <= {BIT_MAX}")
        object.__setattr__(self, "int_bits", int(m))
        object.__setattr__(self, "frac_bits", int(n))

    @property
    def total(self) -> int:
        return self.int_bits + self.frac_bits

    @property
    def min_code(self) -> int:
        return -(1 << (self.total - 1))

    @property
    def max_code(self) -> int:
        return (1 << (self.total - 1)) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    def codes(self) -> np.ndarray:
        """Every representable code, ascending."""
        return np.arange(self.min_code, self.max_code + 1, dtype=np.int64)

    def __str__(self):
        return f"Q{self.int_bits}.{self.frac_bits}"

    @classmethod
    def parse(cls, text) -> "FixedPointFormat":
        if isinstance(text, cls):
            return text
        match = re.fullmatch(r"\s*Q(\d+)\.(\d+)\s*", str(text))
        if not match:
            raise ValueError(f"cannot parse fixed-point format {text!r} (expected e.g. 'Q9.7')")
        return cls(int(match.group(1)), int(match.group(2)))


class Encoded(NamedTuple):
    code: int
    value: float
    saturated: bool


def encode(fmt: FixedPointFormat, x) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised encode: returns ``(codes, saturated_mask)``."""
    xa = np.asarray(x, dtype=np.float64)
    scaled = np.rint(np.ldexp(xa, fmt.frac_bits))  # rint rounds half to even
    sat = (scaled < fmt.min_code) | (scaled > fmt.max_code)
    codes = np.clip(scaled, fmt.min_code, fmt.max_code).astype(np.int64)
    return codes, sat


def decode(fmt: FixedPointFormat, codes):
    c = np.asarray(codes, dtype=np.int64)
    v = np.ldexp(c.astype(np.float64), -fmt.frac_bits)
    return float(v) if v.ndim == 0 else v


def encode_decode(fmt: FixedPointFormat, x: float) -> Encoded:
    """Round ``x`` to ``fmt``; ``saturated`` flags a clamped value."""
    if not math.isfinite(x):
        raise ValueError("cannot encode a non-finite value")
    code, sat = encode(fmt, x)
    code = int(code)
    return Encoded(code, decode(fmt, code), bool(sat))


def coeff_format_for(values, width: int = COEFF_WIDTH) -> FixedPointFormat:
    """Most precise ``width``-bit format holding every value without saturation.

    Starts from ``m = floor(log2(max|v|)) + 2`` (sign plus integer bits) and
    widens if rounding would push the largest magnitude past the top code.
    """
    v = np.abs(np.asarray(values, dtype=np.float64))
    peak = float(v.max()) if v.size else 0.0
    m = 1 if peak == 0 else max(1, math.floor(math.log2(peak)) + 2)
    while m <= width:
        fmt = FixedPointFormat(m, width - m)
        if not np.any(encode(fmt, values)[1]):
            return fmt
        m += 1
    raise ValueError(f"coefficients up to {peak!r} do not fit in {width} bits")


def round_shift(v: np.ndarray, s: int) -> np.ndarray:
    """Arithmetic right shift by ``s`` with round-half-to-even."""
    if s <= 0:
        return v << (-s)
    q = v >> s
    r = v - (q << s)
    half = 1 << (s - 1)
    return q + ((r > half) | ((r == half) & ((q & 1) == 1)))


@dataclass(frozen=True, eq=False)
class QuantizedTable:
    kind: ActivationKind
    io_format: FixedPointFormat
    coeff_formats: Dict[str, FixedPointFormat]
    knots_q: np.ndarray
    fwd_q: np.ndarray
    deriv_q: np.ndarray
    source: str = ""

    def __post_init__(self):
        kind = ActivationKind.parse(self.kind)
        io = FixedPointFormat.parse(self.io_format)
        cf = {k: FixedPointFormat.parse(self.coeff_formats[k]) for k in COEFF_KEYS}
        knots = np.array(self.knots_q, dtype=np.int64)
        fwd = np.array(self.fwd_q, dtype=np.int64).reshape(-1, 2)
        der = np.array(self.deriv_q, dtype=np.int64).reshape(-1, 2)
        n = knots.size - 1
        if n < 2 or n & (n - 1):
            raise ValueError("segment count must be a power of two >= 2")
        if fwd.shape[0] != n or der.shape[0] != n:
            raise ValueError("one coefficient pair per segment is required")
        if not np.all(np.diff(knots) > 0):
            raise ValueError("knot codes must be strictly increasing")
        _check_codes(io, knots, "knots")
        for key, arr in zip(COEFF_KEYS, (fwd[:, 0], fwd[:, 1], der[:, 0], der[:, 1])):
            _check_codes(cf[key], arr, key)
        for arr in (knots, fwd, der):
            arr.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "io_format", io)
        object.__setattr__(self, "coeff_formats", cf)
        object.__setattr__(self, "knots_q", knots)
        object.__setattr__(self, "fwd_q", fwd)
        object.__setattr__(self, "deriv_q", der)

    @property
    def segments(self) -> int:
        return self.knots_q.size - 1

    def __eq__(self, other):
        if not isinstance(other, QuantizedTable):
            return NotImplemented
        return (
            self.kind is other.kind
            and self.io_format == other.io_format
            and self.coeff_formats == other.coeff_formats
            and self.source == other.source
            and np.array_equal(self.knots_q, other.knots_q)
            and np.array_equal(self.fwd_q, other.fwd_q)
            and np.array_equal(self.deriv_q, other.deriv_q)
        )

    def decoded(self) -> dict:
        """Real-valued knots and coefficients represented by the codes."""
        cf = self.coeff_formats
        return {
            "knots": decode(self.io_format, self.knots_q),
            "fwd": np.stack([decode(cf["a"], self.fwd_q[:, 0]), decode(cf["b"], self.fwd_q[:, 1])], axis=1),
            "deriv": np.stack([decode(cf["da"], self.deriv_q[:, 0]), decode(cf["db"], self.deriv_q[:, 1])], axis=1),
        }

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "io_format": str(self.io_format),
            "coeff_formats": {k: str(v) for k, v in self.coeff_formats.items()},
            "knots_q": [int(v) for v in self.knots_q],
            "fwd_q": [[int(a), int(b)] for a, b in self.fwd_q],
            "deriv_q": [[int(a), int(b)] for a, b in self.deriv_q],
            "source": self.source,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "QuantizedTable":
        return cls(
            kind=ActivationKind.parse(data["kind"]),
            io_format=FixedPointFormat.parse(data["io_format"]),
            coeff_formats={k: FixedPointFormat.parse(v) for k, v in data["coeff_formats"].items()},
            knots_q=data["knots_q"],
            fwd_q=data["fwd_q"],
            deriv_q=data["deriv_q"],
            source=str(data.get("source", "")),
        )

    @classmethod
    def from_json(cls, text_or_path) -> "QuantizedTable":
        s = str(text_or_path)
        text = s if s.lstrip().startswith("{") else Path(s).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def _check_codes(fmt: FixedPointFormat, codes: np.ndarray, what: str):
    if codes.size and (codes.min() < fmt.min_code or codes.max() > fmt.max_code):
        raise ValueError(f"{what} codes out of range for {fmt}")


def quantize_table(
    t: DapaTable,
    io_fmt: FixedPointFormat,
    coeff_format: Optional[FixedPointFormat] = None,
) -> QuantizedTable:
    """Encode knots in ``io_fmt`` and coefficients in 16-bit formats.

    Each coefficient array gets its own most-precise non-saturating format
    unless ``coeff_format`` forces one format for all of them.
    """
    io_fmt = FixedPointFormat.parse(io_fmt)
    knots_q, _ = encode(io_fmt, t.knots)
    # outer knots never reach a comparator; push a colliding one outward by one LSB
    if knots_q[0] >= knots_q[1] and knots_q[1] > io_fmt.min_code:
        knots_q[0] = knots_q[1] - 1
    if knots_q[-1] <= knots_q[-2] and knots_q[-2] < io_fmt.max_code:
        knots_q[-1] = knots_q[-2] + 1
    if not np.all(np.diff(knots_q) > 0):
        bad = int(np.flatnonzero(np.diff(knots_q) <= 0)[0])
        raise ValueError(f"knots collapse at this precision ({io_fmt}): knots {bad} and {bad + 1}")
    arrays = dict(zip(COEFF_KEYS, (t.fwd_coeffs[:, 0], t.fwd_coeffs[:, 1],
                                   t.deriv_coeffs[:, 0], t.deriv_coeffs[:, 1])))
    formats = {}
    codes = {}
    for key, arr in arrays.items():
        fmt = FixedPointFormat.parse(coeff_format) if coeff_format is not None else coeff_format_for(arr)
        formats[key] = fmt
        codes[key] = encode(fmt, arr)[0]
    return QuantizedTable(
        kind=t.kind,
        io_format=io_fmt,
        coeff_formats=formats,
        knots_q=knots_q,
        fwd_q=np.stack([codes["a"], codes["b"]], axis=1),
        deriv_q=np.stack([codes["da"], codes["db"]], axis=1),
        source=t.fingerprint(),
    )


def eval_fixed(q: QuantizedTable, x_code, derivative: bool = False):
    """Bit-exact fixed-point evaluation ``y = a_n x + b_n``.

    The product is formed at full precision, the intercept is shifted to the
    same binary point, and the sum is rounded (half to even) and saturated to
    the I/O format.
    """
    xa = np.asarray(x_code, dtype=np.int64)
    io = q.io_format
    if xa.size and (xa.min() < io.min_code or xa.max() > io.max_code):
        raise ValueError(f"input code out of range for {io}")
    seg = np.searchsorted(q.knots_q[1:-1], xa, side="right")
    coeffs = q.deriv_q if derivative else q.fwd_q
    fa = q.coeff_formats["da" if derivative else "a"].frac_bits
    fb = q.coeff_formats["db" if derivative else "b"].frac_bits
    n = io.frac_bits
    point = max(fa + n, fb)
    acc = ((coeffs[seg, 0] * xa) << (point - fa - n)) + (coeffs[seg, 1] << (point - fb))
    y = np.clip(round_shift(acc, point - n), io.min_code, io.max_code)
    return int(y) if y.ndim == 0 else y


def quantized_function(q: QuantizedTable, derivative: bool = False):
    """Real-valued view of the deployed pipeline: encode, evaluate, decode."""
    def f(x):
        codes, _ = encode(q.io_format, x)
        return decode(q.io_format, eval_fixed(q, codes, derivative))
    return f


@dataclass
class FormatSelection:
    format: FixedPointFormat
    threshold_met: bool
    threshold: float
    fp32_dwmse: float
    quantized_dwmse: float
    history: List[Tuple[int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": str(self.format),
            "threshold_met": self.threshold_met,
            "threshold": self.threshold,
            "fp32_dwmse": self.fp32_dwmse,
            "quantized_dwmse": self.quantized_dwmse,
            "history": [[n, v] for n, v in self.history],
        }


def integer_bits(rng) -> int:
    """``ceil(log2(max(|a|, |b|))) + 1``, the +1 being the sign bit; at least 1."""
    peak = max(abs(float(rng[0])), abs(float(rng[1])))
    if peak <= 0:
        return 1
    return max(1, math.ceil(math.log2(peak)) + 1)


def quantized_dwmse(t: DapaTable, d: EmpiricalDistribution, rng, fmt: FixedPointFormat) -> float:
    """DWMSE against the exact activation of ``t`` quantized with I/O format ``fmt``.

    Returns ``inf`` if the knots collapse at this precision.
    """
    try:
        q = quantize_table(t, fmt)
    except ValueError:
        return math.inf
    return _dwmse_on_cells(t.kind, quantized_function(q), d, rng)


def _dwmse_on_cells(kind, f_approx, d, rng) -> float:
    a, b = float(rng[0]), float(rng[1])
    x, w, _ = density_cells(d.bin_edges, d.bin_mass, (a, b))
    diff = eval_exact(kind, x) - f_approx(x)
    return float(np.sum(w * diff * diff)) / (b - a)


def select_format(
    t: DapaTable,
    d: EmpiricalDistribution,
    rng: Optional[Tuple[float, float]] = None,
    theta: float = DEFAULT_THETA,
    bit_max: int = BIT_MAX,
) -> FormatSelection:
    """Pick the I/O format ``Q(m, n)`` for ``t`` under a DWMSE budget.

    The threshold is ``theta`` times the floating-point table's DWMSE.  ``m``
    comes from the input range; ``n`` grows from 0 until the quantized DWMSE
    meets the threshold or ``m + n`` reaches ``bit_max``.  ``threshold_met``
    reports which of the two stopped the search.
    """
    rng = d.range if rng is None else (float(rng[0]), float(rng[1]))
    if not rng[0] < rng[1]:
        raise ValueError("range requires a < b")
    if not theta >= 1:
        raise ValueError(f"theta must be >= 1, got {theta!r}")
    if bit_max > BIT_MAX or bit_max < 1:
        raise ValueError(f"bit_max must lie in [1, {BIT_MAX}]")
    fp32 = _dwmse_on_cells(t.kind, lambda x: eval_piecewise(t, x), d, rng)
    threshold = theta * fp32
    m = integer_bits(rng)
    if m >= bit_max:
        raise ValueError(f"integer bits exceed budget: m = {m} >= bit_max = {bit_max}")
    history = []
    n = 0
    current = quantized_dwmse(t, d, rng, FixedPointFormat(m, n))
    history.append((n, current))
    while m + n < bit_max and current > threshold:
        n += 1
        current = quantized_dwmse(t, d, rng, FixedPointFormat(m, n))
        history.append((n, current))
    return FormatSelection(FixedPointFormat(m, n), current <= threshold, threshold, fp32, current, history)


# -- C header export -------------------------------------------------------------

def _c_array(name: str, values) -> str:
    body = ", ".join(str(int(v)) for v in values)
    return f"static const int16_t {name}[{len(values)}] = {{{body}}};"


def export_c_header(q: QuantizedTable, path=None, guard: str = "DAPA_TABLE_H") -> str:
    """Render ``q`` as a C header of two's-complement int16 arrays in segment order."""
    cf = q.coeff_formats
    lines = [
        f"/* Piecewise-linear {q.kind.value} table, {q.segments} segments, I/O {q.io_format}. */",
        f"#ifndef {guard}",
        f"#define {guard}",
        "",
        "#include <stdint.h>",
        "",
        f'#define DAPA_KIND "{q.kind.value}"',
        f'#define DAPA_SOURCE "{q.source}"',
        f"#define DAPA_SEGMENTS {q.segments}",
        f"#define DAPA_IO_INT_BITS {q.io_format.int_bits}",
        f"#define DAPA_IO_FRAC_BITS {q.io_format.frac_bits}",
    ]
    for key, label in zip(COEFF_KEYS, ("COEF_A", "COEF_B", "DCOEF_A", "DCOEF_B")):
        lines.append(f"#define DAPA_{label}_INT_BITS {cf[key].int_bits}")
        lines.append(f"#define DAPA_{label}_FRAC_BITS {cf[key].frac_bits}")
    lines += [
        "",
        _c_array("KNOTS", q.knots_q),
        _c_array("COEF_A", q.fwd_q[:, 0]),
        _c_array("COEF_B", q.fwd_q[:, 1]),
        _c_array("DCOEF_A", q.deriv_q[:, 0]),
        _c_array("DCOEF_B", q.deriv_q[:, 1]),
        "",
        f"#endif /* {guard} */",
        "",
    ]
    text = "\n".join(lines)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def parse_c_header(text: str) -> QuantizedTable:
    """Inverse of :func:`export_c_header`."""
    defines = dict(re.findall(r"#define\s+(DAPA_\w+)\s+(\S+)", text))
    arrays = {
        name: [int(v) for v in body.split(",") if v.strip()]
        for name, body in re.findall(r"int16_t\s+(\w+)\[\d+\]\s*=\s*\{([^}]*)\}", text)
    }

    def fmt(label):
        return FixedPointFormat(int(defines[f"DAPA_{label}_INT_BITS"]), int(defines[f"DAPA_{label}_FRAC_BITS"]))

    labels = ("COEF_A", "COEF_B", "DCOEF_A", "DCOEF_B")
    return QuantizedTable(
        kind=ActivationKind.parse(defines["DAPA_KIND"].strip('"')),
        io_format=fmt("IO"),
        coeff_formats={k: fmt(label) for k, label in zip(COEFF_KEYS, labels)},
        knots_q=arrays["KNOTS"],
        fwd_q=np.stack([arrays["COEF_A"], arrays["COEF_B"]], axis=1),
        deriv_q=np.stack([arrays["DCOEF_A"], arrays["DCOEF_B"]], axis=1),
        source=defines.get("DAPA_SOURCE", '""').strip('"'),
    )
