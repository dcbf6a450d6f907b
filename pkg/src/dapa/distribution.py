"""Empirical distributions of pre-activation values.

Samples collected from forward passes are binned into an equal-width
histogram.  The histogram supplies the density used to weight errors, the
piecewise-linear CDF, and its inverse (used to place segment boundaries).
A sorted copy of the samples is retained up to a cap so that segment fits can
use the actual draws instead of bin midpoints.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

DEFAULT_BINS = 2048
DEFAULT_SAMPLE_CAP = 10**6


@dataclass(frozen=True)
class SampleSet:
    """A batch of scalar pre-activation values plus a free-form tag."""

    values: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if values.size == 0:
            raise ValueError("empty input")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise ValueError(
                f"non-finite sample at index {int(bad[0])}: {values[bad[0]]!r}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Equal-width histogram density with CDF and quantile queries.

    ``bin_mass`` sums to one.  ``sorted_samples`` holds the (clamped) draws
    when their number did not exceed the retention cap, else ``None``.
    """

    bin_edges: np.ndarray
    bin_mass: np.ndarray
    sample_count: int
    sorted_samples: Optional[np.ndarray] = None
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        mass = np.asarray(self.bin_mass, dtype=np.float64)
        if edges.ndim != 1 or mass.ndim != 1 or edges.size != mass.size + 1:
            raise ValueError("bin_edges must have exactly one more entry than bin_mass")
        if mass.size < 1:
            raise ValueError("at least one bin is required")
        if not np.all(np.diff(edges) > 0):
            raise ValueError("bin_edges must be strictly increasing")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise ValueError("bin_mass must be finite and nonnegative")
        if abs(mass.sum() - 1.0) > 1e-12:
            raise ValueError(f"bin_mass sums to {mass.sum()!r}, expected 1")
        if int(self.sample_count) < 1:
            raise ValueError("sample_count must be >= 1")
        cum = np.concatenate(([0.0], np.cumsum(mass)))
        cum[-1] = 1.0
        # cumsum rounding must never break monotonicity at the top end
        np.minimum(cum, 1.0, out=cum)
        for arr in (edges, mass, cum):
            arr.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "bin_mass", mass)
        object.__setattr__(self, "sample_count", int(self.sample_count))
        object.__setattr__(self, "_cum", cum)
        if self.sorted_samples is not None:
            s = np.sort(np.asarray(self.sorted_samples, dtype=np.float64))
            s.setflags(write=False)
            object.__setattr__(self, "sorted_samples", s)

    @property
    def bins(self) -> int:
        return self.bin_mass.size

    @property
    def range(self) -> Tuple[float, float]:
        return float(self.bin_edges[0]), float(self.bin_edges[-1])

    @property
    def lo(self) -> float:
        return float(self.bin_edges[0])

    @property
    def hi(self) -> float:
        return float(self.bin_edges[-1])

    @property
    def bin_widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def cumulative(self) -> np.ndarray:
        """CDF values at the bin edges (length ``bins + 1``)."""
        return self._cum

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.bin_edges.tobytes())
        h.update(self.bin_mass.tobytes())
        h.update(str(self.sample_count).encode())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, EmpiricalDistribution):
            return NotImplemented
        return (
            self.sample_count == other.sample_count
            and np.array_equal(self.bin_edges, other.bin_edges)
            and np.array_equal(self.bin_mass, other.bin_mass)
        )

    # queries are thin wrappers so that both ``d.cdf(x)`` and ``cdf_at(d, x)`` work
    def pdf(self, x):
        return pdf_at(self, x)

    def cdf(self, x):
        return cdf_at(self, x)

    def quantile(self, q):
        return quantile(self, q)

    def to_dict(self) -> dict:
        return {
            "bin_edges": [float(v) for v in self.bin_edges],
            "bin_mass": [float(v) for v in self.bin_mass],
            "sample_count": self.sample_count,
            "range": [self.lo, self.hi],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "EmpiricalDistribution":
        edges = np.asarray(data["bin_edges"], dtype=np.float64)
        if "range" in data:
            lo, hi = data["range"]
            if float(lo) != edges[0] or float(hi) != edges[-1]:
                raise ValueError("range does not match bin_edges endpoints")
        return cls(edges, np.asarray(data["bin_mass"], dtype=np.float64),
                   int(data["sample_count"]))

    @classmethod
    def from_json(cls, text_or_path) -> "EmpiricalDistribution":
        text = _maybe_read(text_or_path)
        return cls.from_dict(json.loads(text))


def _maybe_read(text_or_path) -> str:
    if isinstance(text_or_path, Path):
        return text_or_path.read_text(encoding="utf-8")
    s = str(text_or_path)
    if s.lstrip().startswith("{"):
        return s
    return Path(s).read_text(encoding="utf-8")


def _as_sample_set(samples) -> SampleSet:
    if isinstance(samples, SampleSet):
        return samples
    return SampleSet(np.asarray(samples, dtype=np.float64))


def from_samples(
    samples: Union[SampleSet, Sequence[float], np.ndarray],
    bins: int = DEFAULT_BINS,
    clip: Optional[Tuple[float, float]] = None,
    sample_cap: int = DEFAULT_SAMPLE_CAP,
) -> EmpiricalDistribution:
    """Histogram ``samples`` into ``bins`` equal-width bins.

    Without ``clip`` the support is the observed ``[min, max]``; with it the
    support is ``[clip_lo, clip_hi]`` and values outside are clamped to the
    nearest boundary (they keep their weight).  A zero-width support (all
    samples equal) is widened to one unit centred on the value.
    """
    ss = _as_sample_set(samples)
    if int(bins) != bins or bins < 2:
        raise ValueError("bins must be an integer >= 2")
    bins = int(bins)
    values = ss.values
    if clip is not None:
        lo, hi = float(clip[0]), float(clip[1])
        if not lo < hi:
            raise ValueError("clip requires lo < hi")
        values = np.clip(values, lo, hi)
    else:
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts = _bin_counts(values, edges)
    mass = counts / counts.sum()
    kept = np.sort(values) if values.size <= sample_cap else None
    return EmpiricalDistribution(edges, mass, values.size, kept)


def _bin_counts(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # bin i is [lo + i w, lo + (i+1) w); the top edge belongs to the last bin.
    # Index from the scaled offset rather than the rounded edge array so that
    # grid points such as 0.3 with w = 0.1 land in the bin they belong to.
    bins = edges.size - 1
    lo, hi = edges[0], edges[-1]
    idx = np.floor((values - lo) * (bins / (hi - lo))).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    return np.bincount(idx, minlength=bins).astype(np.float64)


def merge(a: EmpiricalDistribution, b: EmpiricalDistribution) -> EmpiricalDistribution:
    """Combine two distributions, weighting each by its sample count.

    The result spans the union of both ranges with the larger bin count.  If
    both sides retained their samples the histogram is rebuilt from the
    concatenation; otherwise each side's mass is spread uniformly within its
    bins and re-binned by overlap.
    """
    lo = min(a.lo, b.lo)
    hi = max(a.hi, b.hi)
    bins = max(a.bins, b.bins)
    edges = np.linspace(lo, hi, bins + 1)
    total = a.sample_count + b.sample_count
    if a.sorted_samples is not None and b.sorted_samples is not None:
        values = np.concatenate((a.sorted_samples, b.sorted_samples))
        counts = _bin_counts(values, edges)
        return EmpiricalDistribution(edges, counts / counts.sum(), total,
                                     np.sort(values))
    wa = a.sample_count / total
    wb = b.sample_count / total
    mass = wa * _rebin(a, edges) + wb * _rebin(b, edges)
    mass = mass / mass.sum()
    return EmpiricalDistribution(edges, mass, total)


def _rebin(d: EmpiricalDistribution, edges: np.ndarray) -> np.ndarray:
    # CDF is linear within source bins, so overlap mass is a CDF difference
    cum = cdf_at(d, edges)
    cum[0], cum[-1] = 0.0, 1.0
    return np.maximum(np.diff(cum), 0.0)


def pdf_at(d: EmpiricalDistribution, x):
    """Histogram density at ``x``; zero outside ``[lo, hi]``."""
    xa = np.asarray(x, dtype=np.float64)
    idx = np.searchsorted(d.bin_edges, xa, side="right") - 1
    idx = np.clip(idx, 0, d.bins - 1)
    dens = d.bin_mass[idx] / d.bin_widths[idx]
    out = np.where((xa >= d.lo) & (xa <= d.hi), dens, 0.0)
    return float(out) if out.ndim == 0 else out


def cdf_at(d: EmpiricalDistribution, x):
    """Piecewise-linear CDF: cumulative bin mass, linear inside each bin."""
    xa = np.asarray(x, dtype=np.float64)
    out = np.interp(xa, d.bin_edges, d.cumulative)
    out = np.where(xa <= d.lo, 0.0, np.where(xa >= d.hi, 1.0, out))
    return float(out) if out.ndim == 0 else out


def quantile(d: EmpiricalDistribution, q):
    """Smallest ``x`` with ``cdf_at(d, x) >= q``.

    ``quantile(d, 0)`` is ``lo`` and ``quantile(d, 1)`` is ``hi``.  Empty bins
    are skipped, so flat stretches of the CDF resolve to their left end.
    """
    qa = np.asarray(q, dtype=np.float64)
    if np.any(~(qa >= 0.0) | ~(qa <= 1.0)):
        raise ValueError("quantile level must lie in [0, 1]")
    cum = d.cumulative
    # j is the first edge with cum[j] >= q, so bin j-1 has positive mass
    j = np.searchsorted(cum, qa, side="left")
    j = np.clip(j, 1, d.bins)
    i = j - 1
    width = d.bin_edges[j] - d.bin_edges[i]
    m = cum[j] - cum[i]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(m > 0, (qa - cum[i]) / m, 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    out = d.bin_edges[i] + frac * width
    out = np.where(j == d.bins, np.minimum(out, d.hi), out)
    out = np.where(qa <= 0.0, d.lo, np.where(qa >= 1.0, d.hi, out))
    return float(out) if out.ndim == 0 else out


def read_samples(path, fmt: Optional[str] = None, source_tag: Optional[str] = None) -> SampleSet:
    """Load samples from a text file (one float per line) or raw float32 LE.

    ``fmt`` is ``"text"`` or ``"f32"``; when omitted, the ``.f32``/``.bin``/
    ``.raw`` suffixes select binary and anything else is read as text.
    """
    path = Path(path)
    if fmt is None:
        fmt = "f32" if path.suffix.lower() in (".f32", ".bin", ".raw") else "text"
    if fmt == "f32":
        raw = path.read_bytes()
        if len(raw) % 4:
            raise ValueError(f"{path}: size {len(raw)} is not a multiple of 4 bytes")
        values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    elif fmt == "text":
        lines = path.read_text(encoding="utf-8").splitlines()
        vals = []
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line:
                continue
            try:
                vals.append(float(line))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: cannot parse {line!r} as a float") from None
        values = np.asarray(vals, dtype=np.float64)
    else:
        raise ValueError(f"unknown sample format {fmt!r}")
    return SampleSet(values, source_tag if source_tag is not None else path.name)


def write_samples(path, values, fmt: Optional[str] = None) -> None:
    path = Path(path)
    values = np.asarray(values, dtype=np.float64).ravel()
    if fmt is None:
        fmt = "f32" if path.suffix.lower() in (".f32", ".bin", ".raw") else "text"
    if fmt == "f32":
        path.write_bytes(values.astype("<f4").tobytes())
    else:
        path.write_text("".join(f"{v!r}\n" for v in values.tolist()), encoding="utf-8")
