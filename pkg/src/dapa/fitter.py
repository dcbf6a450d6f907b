"""Distribution-aware piecewise-linear fits.

Segment boundaries sit at equal-probability quantiles of the input
distribution, so every segment carries ``1/N`` of the mass.  Within each
segment a line is fitted to the activation (and, separately, to its
derivative) by weighted least squares over points drawn from the
distribution.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .distribution import EmpiricalDistribution, cdf_at, quantile
from .reference import ActivationKind, eval_exact, eval_exact_derivative

DEFAULT_SEGMENTS = 16
# largest tolerated ratio sum(w x^2) / sum(w (x - mean)^2)
MAX_CONDITION = 1e12


class FitError(ValueError):
    """A segment could not be fitted; ``segment`` holds its index if known."""

    def __init__(self, message, segment=None):
        super().__init__(message if segment is None else f"segment {segment}: {message}")
        self.segment = segment


def is_power_of_two(n) -> bool:
    return int(n) == n and n >= 1 and (int(n) & (int(n) - 1)) == 0


def _check_segments(n_segments):
    if not (is_power_of_two(n_segments) and n_segments >= 2):
        raise ValueError(f"segment count must be a power of two >= 2, got {n_segments!r}")
    return int(n_segments)


@dataclass(frozen=True)
class DapaConfig:
    """Options for :func:`build_dapa`.

    weighting
        ``"distribution"`` fits each segment to points drawn from the
        distribution (the DWMSE objective); ``"uniform"`` fits to an evenly
        spaced grid with unit weights (the plain MSE objective).
    use_samples
        Use the retained raw samples when the distribution has them.  When
        False (or none were retained) bin midpoints weighted by bin mass are
        used for both knot placement and fitting.
    """

    weighting: str = "distribution"
    use_samples: bool = True
    uniform_points: int = 256

    def __post_init__(self):
        if self.weighting not in ("distribution", "uniform"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.uniform_points < 2:
            raise ValueError("uniform_points must be >= 2")


@dataclass(frozen=True, eq=False)
class DapaTable:
    kind: ActivationKind
    knots: np.ndarray
    fwd_coeffs: np.ndarray
    deriv_coeffs: np.ndarray
    segment_mass: np.ndarray
    dist_fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = ActivationKind.parse(self.kind)
        knots = np.array(self.knots, dtype=np.float64)
        fwd = np.array(self.fwd_coeffs, dtype=np.float64).reshape(-1, 2)
        der = np.array(self.deriv_coeffs, dtype=np.float64).reshape(-1, 2)
        mass = np.array(self.segment_mass, dtype=np.float64)
        n = knots.size - 1
        _check_segments(n)
        if not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        if fwd.shape[0] != n or der.shape[0] != n or mass.size != n:
            raise ValueError("coefficient and mass arrays must have one entry per segment")
        for arr in (knots, fwd, der, mass):
            arr.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "fwd_coeffs", fwd)
        object.__setattr__(self, "deriv_coeffs", der)
        object.__setattr__(self, "segment_mass", mass)

    @property
    def segments(self) -> int:
        return self.knots.size - 1

    def segment_index(self, x):
        return segment_index(self.knots, x)

    def __call__(self, x, derivative=False):
        return eval_piecewise(self, x, derivative)

    def __eq__(self, other):
        if not isinstance(other, DapaTable):
            return NotImplemented
        return (
            self.kind is other.kind
            and self.dist_fingerprint == other.dist_fingerprint
            and np.array_equal(self.knots, other.knots)
            and np.array_equal(self.fwd_coeffs, other.fwd_coeffs)
            and np.array_equal(self.deriv_coeffs, other.deriv_coeffs)
            and np.array_equal(self.segment_mass, other.segment_mass)
        )

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256(self.kind.value.encode())
        for arr in (self.knots, self.fwd_coeffs, self.deriv_coeffs):
            h.update(arr.tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        # repr() of a float is the shortest string that round-trips exactly
        fmt = lambda v: repr(float(v))  # noqa: E731
        return {
            "kind": self.kind.value,
            "knots": [fmt(v) for v in self.knots],
            "fwd": [[fmt(a), fmt(b)] for a, b in self.fwd_coeffs],
            "deriv": [[fmt(a), fmt(b)] for a, b in self.deriv_coeffs],
            "segment_mass": [fmt(v) for v in self.segment_mass],
            "dist_fingerprint": self.dist_fingerprint,
            "meta": dict(self.meta),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "DapaTable":
        to_f = lambda seq: [float(v) for v in seq]  # noqa: E731
        return cls(
            kind=ActivationKind.parse(data["kind"]),
            knots=to_f(data["knots"]),
            fwd_coeffs=[to_f(p) for p in data["fwd"]],
            deriv_coeffs=[to_f(p) for p in data["deriv"]],
            segment_mass=to_f(data["segment_mass"]),
            dist_fingerprint=str(data.get("dist_fingerprint", "")),
            meta=dict(data.get("meta", {})),
        )

    @classmethod
    def from_json(cls, text_or_path) -> "DapaTable":
        s = str(text_or_path)
        text = s if s.lstrip().startswith("{") else Path(s).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def _sample_knots(samples: np.ndarray, n_segments: int) -> np.ndarray:
    # place knot n halfway between order statistics j-1 and j, j = floor(n m / N),
    # so exactly j samples fall below it (absent ties)
    m = samples.size
    j = (np.arange(1, n_segments) * m) // n_segments
    return 0.5 * (samples[j - 1] + samples[j])


def compute_knots(d: EmpiricalDistribution, n_segments: int, use_samples: bool = True) -> np.ndarray:
    """Return the ``N + 1`` segment boundaries for ``N`` equal-mass segments.

    The outer boundaries are the support endpoints.  Interior knots are the
    ``n/N`` quantiles: taken from the retained samples when available (and
    ``use_samples``), otherwise from the histogram's piecewise-linear CDF.
    """
    n_segments = _check_segments(n_segments)
    samples = d.sorted_samples if use_samples else None
    if samples is not None and samples.size >= 2 * n_segments:
        interior = _sample_knots(samples, n_segments)
    else:
        interior = quantile(d, np.arange(1, n_segments) / n_segments)
    knots = np.concatenate(([d.lo], interior, [d.hi]))
    bad = np.flatnonzero(np.diff(knots) <= 0)
    if bad.size:
        pairs = ", ".join(f"({i}, {i + 1})" for i in bad[:8])
        raise FitError(f"degenerate quantiles: knots {pairs} coincide at {knots[bad[0]]!r}")
    return knots


def segment_index(knots: np.ndarray, x):
    """Segment holding ``x`` under the half-open ``[k_n, k_n+1)`` convention.

    Inputs below the first knot map to segment 0 and inputs at or above the
    last knot to segment ``N - 1``.
    """
    return np.searchsorted(knots[1:-1], np.asarray(x, dtype=np.float64), side="right")


def _target(kind: ActivationKind, x, derivative: bool):
    return eval_exact_derivative(kind, x) if derivative else eval_exact(kind, x)


def wls_line(xs, ys, ws) -> Tuple[float, float]:
    """Weighted least-squares line ``y ~ a x + b`` via centred normal equations."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ws = np.asarray(ws, dtype=np.float64)
    if not (xs.shape == ys.shape == ws.shape) or xs.ndim != 1:
        raise ValueError("xs, ys and ws must be 1-D arrays of equal length")
    if np.any(~(ws > 0)) or not np.all(np.isfinite(ws)):
        raise FitError("weights must be positive and finite")
    if np.unique(xs).size < 2:
        raise FitError("underdetermined segment: fewer than 2 distinct x values")
    wsum = math.fsum(ws)
    xbar = math.fsum(ws * xs) / wsum
    ybar = math.fsum(ws * ys) / wsum
    dx = xs - xbar
    sxx = math.fsum(ws * dx * dx)
    raw = math.fsum(ws * xs * xs)
    if sxx <= 0 or raw / sxx > MAX_CONDITION:
        raise FitError(f"ill-conditioned segment (condition estimate {raw / sxx if sxx > 0 else math.inf:.3g})")
    a = math.fsum(ws * dx * (ys - ybar)) / sxx
    b = ybar - a * xbar
    return a, b


def fit_segment_wls(kind, xs, ws, derivative: bool = False) -> Tuple[float, float]:
    """Fit ``a x + b`` to the activation (or its derivative) on one segment.

    Minimises ``sum(w_i * (f(x_i) - (a x_i + b))**2)``.
    """
    kind = ActivationKind.parse(kind)
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ws = np.asarray(ws, dtype=np.float64).ravel()
    return wls_line(xs, _target(kind, xs, derivative), ws)


def tangent_line(kind, x0: float, derivative: bool = False) -> Tuple[float, float]:
    a = float(_target(kind, x0, True)) if not derivative else _second_derivative(kind, x0)
    b = float(_target(kind, x0, derivative)) - a * x0
    return a, b


def _second_derivative(kind, x0, h=1e-5):
    kind = ActivationKind.parse(kind)
    if kind is ActivationKind.EXP:
        return math.exp(x0)
    if kind is ActivationKind.IDENTITY:
        return 0.0
    return float((eval_exact_derivative(kind, x0 + h) - eval_exact_derivative(kind, x0 - h)) / (2 * h))


def segment_points(
    d: EmpiricalDistribution,
    knots: np.ndarray,
    config: Optional[DapaConfig] = None,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """The ``(xs, ws)`` each segment is fitted on under ``config``.

    Retained samples get unit weight (they were drawn from the density
    already); bin midpoints get their bin mass.  ``"uniform"`` weighting
    ignores the distribution and uses an even grid over the segment.
    """
    config = config or DapaConfig()
    n = knots.size - 1
    if config.weighting == "uniform":
        out = []
        for i in range(n):
            k = config.uniform_points
            xs = knots[i] + (np.arange(k) + 0.5) * ((knots[i + 1] - knots[i]) / k)
            out.append((xs, np.ones(k)))
        return out
    if config.use_samples and d.sorted_samples is not None:
        xs = d.sorted_samples
        ws = np.ones(xs.size)
    else:
        keep = d.bin_mass > 0
        xs = d.midpoints[keep]
        ws = d.bin_mass[keep]
    idx = segment_index(knots, xs)
    # xs is sorted, so each segment is a contiguous run
    bounds = np.searchsorted(idx, np.arange(n + 1), side="left")
    return [(xs[bounds[i]:bounds[i + 1]], ws[bounds[i]:bounds[i + 1]]) for i in range(n)]


def _fit_or_tangent(kind, xs, ws, derivative, segment):
    if xs.size == 0:
        raise FitError("empty segment: no points fall inside it", segment)
    if np.unique(xs).size == 1:
        return tangent_line(kind, float(xs[0]), derivative)
    try:
        return fit_segment_wls(kind, xs, ws, derivative)
    except FitError as exc:
        raise FitError(str(exc), segment) from None


def build_dapa(
    d: EmpiricalDistribution,
    kind=ActivationKind.GELU_TANH,
    n_segments: int = DEFAULT_SEGMENTS,
    config: Optional[DapaConfig] = None,
) -> DapaTable:
    """Fit an ``n_segments``-piece linear approximation of ``kind`` and its derivative.

    Both tables share the same quantile knots.  A segment whose points are
    all identical gets the tangent line at that point.
    """
    kind = ActivationKind.parse(kind)
    config = config or DapaConfig()
    use_samples = config.use_samples and d.sorted_samples is not None
    knots = compute_knots(d, n_segments, use_samples=use_samples)
    groups = segment_points(d, knots, config)
    fwd = np.empty((n_segments, 2))
    der = np.empty((n_segments, 2))
    for i, (xs, ws) in enumerate(groups):
        fwd[i] = _fit_or_tangent(kind, xs, ws, False, i)
        der[i] = _fit_or_tangent(kind, xs, ws, True, i)
    if use_samples:
        counts = np.diff(np.searchsorted(segment_index(knots, d.sorted_samples),
                                         np.arange(n_segments + 1)))
        mass = counts / d.sorted_samples.size
    else:
        mass = np.diff(cdf_at(d, knots))
    return DapaTable(
        kind=kind,
        knots=knots,
        fwd_coeffs=fwd,
        deriv_coeffs=der,
        segment_mass=mass,
        dist_fingerprint=d.fingerprint(),
        meta={
            "weighting": config.weighting,
            "points": "samples" if use_samples else "bins",
            "bins": d.bins,
            "sample_count": d.sample_count,
        },
    )


def eval_piecewise(t: DapaTable, x, derivative: bool = False):
    """Evaluate the forward (or derivative) table at ``x``.

    Outside ``[k_0, k_N]`` the boundary segment's line is extrapolated.
    """
    xa = np.asarray(x, dtype=np.float64)
    coeffs = t.deriv_coeffs if derivative else t.fwd_coeffs
    idx = segment_index(t.knots, xa)
    y = coeffs[idx, 0] * xa + coeffs[idx, 1]
    return float(y) if y.ndim == 0 else y
