"""Approximation error metrics and correlation statistics.

``dwmse`` weights the squared error by the input density, normalised over the
evaluation range, and integrates with the midpoint rule at histogram-bin
resolution::

    DWMSE = 1/(b - a) * integral_a^b p(x) (f(x) - g(x))^2 dx
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .distribution import EmpiricalDistribution
from .reference import eval_exact

Func = Callable[[np.ndarray], np.ndarray]


@dataclass
class ApproxReport:
    mse: float
    dwmse: float
    range: Tuple[float, float]
    per_segment_dwmse: list = field(default_factory=list)
    eval_grid_size: int = 0
    in_range_mass: float = 1.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["range"] = list(self.range)
        return out


@dataclass
class CorrelationReport:
    pearson_r: float
    spearman_rho: float
    kendall_tau: float
    fisher_ci: Optional[Tuple[float, float]]
    n_pairs: int
    level: float = 0.95

    def to_dict(self) -> dict:
        out = asdict(self)
        out["fisher_ci"] = None if self.fisher_ci is None else list(self.fisher_ci)
        return out

    def to_text(self) -> str:
        ci = "n/a" if self.fisher_ci is None else f"[{self.fisher_ci[0]:.4f}, {self.fisher_ci[1]:.4f}]"
        rows = [
            ("pairs", str(self.n_pairs)),
            ("pearson r", f"{self.pearson_r:.6f}"),
            ("spearman rho", f"{self.spearman_rho:.6f}"),
            ("kendall tau-b", f"{self.kendall_tau:.6f}"),
            (f"fisher CI ({self.level:.0%})", ci),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _check_range(rng) -> Tuple[float, float]:
    a, b = float(rng[0]), float(rng[1])
    if not a < b:
        raise ValueError(f"range requires a < b, got ({a}, {b})")
    return a, b


def _pairwise_sum(v: np.ndarray) -> float:
    # np.sum is pairwise for contiguous float arrays: order-fixed and deterministic
    return float(np.sum(np.ascontiguousarray(v, dtype=np.float64)))


def mse(f_ref: Func, f_approx: Func, rng=(-4.0, 4.0), grid: int = 100_000) -> float:
    """Mean squared difference on a uniform midpoint grid of ``grid`` points."""
    a, b = _check_range(rng)
    if grid < 2:
        raise ValueError("grid must be >= 2")
    x = a + (np.arange(grid) + 0.5) * ((b - a) / grid)
    diff = np.asarray(f_ref(x), dtype=np.float64) - np.asarray(f_approx(x), dtype=np.float64)
    return _pairwise_sum(diff * diff) / grid


def density_cells(edges, mass, rng, refine: int = 1):
    """Midpoints and normalised weights of the histogram cells inside ``rng``.

    Each bin is intersected with ``[a, b]`` and split into ``refine`` equal
    cells.  Weights are ``density * cell_length`` rescaled to sum to one, so
    the raw scale of ``mass`` is irrelevant.  Returns ``(x, w, raw_mass)``.
    """
    a, b = _check_range(rng)
    edges = np.asarray(edges, dtype=np.float64)
    mass = np.asarray(mass, dtype=np.float64)
    lo = np.maximum(edges[:-1], a)
    hi = np.minimum(edges[1:], b)
    keep = (hi > lo) & (mass > 0)
    if not np.any(keep):
        raise ValueError("no support in range")
    density = mass[keep] / np.diff(edges)[keep]
    lo, hi = lo[keep], hi[keep]
    steps = (np.arange(refine) + 0.5) / refine
    x = (lo[:, None] + (hi - lo)[:, None] * steps[None, :]).ravel()
    w = np.repeat(density * (hi - lo) / refine, refine)
    raw = _pairwise_sum(w)
    if raw <= 0:
        raise ValueError("no support in range")
    return x, w / raw, raw


def weighted_mse(f_ref: Func, f_approx: Func, edges, mass, rng, refine: int = 1) -> float:
    """DWMSE against an arbitrary (possibly unnormalised) binned density."""
    a, b = _check_range(rng)
    x, w, _ = density_cells(edges, mass, rng, refine)
    diff = np.asarray(f_ref(x), dtype=np.float64) - np.asarray(f_approx(x), dtype=np.float64)
    return _pairwise_sum(w * diff * diff) / (b - a)


def dwmse(f_ref: Func, f_approx: Func, d: EmpiricalDistribution, rng=None, refine: int = 1) -> float:
    """Distribution-weighted MSE of ``f_approx`` against ``f_ref`` over ``rng``.

    ``rng`` defaults to the distribution's support.
    """
    rng = d.range if rng is None else rng
    return weighted_mse(f_ref, f_approx, d.bin_edges, d.bin_mass, rng, refine)


def approx_report(table, d: EmpiricalDistribution, rng=None, grid: int = 100_000,
                  refine: int = 1) -> ApproxReport:
    """MSE, DWMSE and per-segment DWMSE of a piecewise table against its reference."""
    from .fitter import eval_piecewise, segment_index

    rng = d.range if rng is None else rng
    a, b = _check_range(rng)
    ref = lambda x: eval_exact(table.kind, x)  # noqa: E731
    approx = lambda x: eval_piecewise(table, x)  # noqa: E731
    x, w, raw = density_cells(d.bin_edges, d.bin_mass, (a, b), refine)
    diff = ref(x) - approx(x)
    contrib = w * diff * diff / (b - a)
    seg = segment_index(table.knots, x)
    per_seg = [_pairwise_sum(contrib[seg == i]) for i in range(table.segments)]
    return ApproxReport(
        mse=mse(ref, approx, (a, b), grid),
        dwmse=_pairwise_sum(contrib),
        range=(a, b),
        per_segment_dwmse=per_seg,
        eval_grid_size=int(x.size),
        in_range_mass=raw,
    )


# -- correlation statistics ---------------------------------------------------

def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = _pairwise_sum(dx * dx)
    syy = _pairwise_sum(dy * dy)
    if sxx <= 0 or syy <= 0:
        raise ValueError("degenerate input: zero variance")
    r = _pairwise_sum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given the mean of their positions."""
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.concatenate(([True], sv[1:] != sv[:-1])))
    ends = np.concatenate((starts[1:], [v.size]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def kendall_tau_b(x: np.ndarray, y: np.ndarray) -> float:
    """Tie-corrected Kendall tau via the signed pair-product matrix."""
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(x.size, k=1)
    sx, sy = sx[iu], sy[iu]
    s = float(np.sum(sx * sy))
    nx = float(np.count_nonzero(sx))
    ny = float(np.count_nonzero(sy))
    if nx == 0 or ny == 0:
        raise ValueError("degenerate input: all values tied")
    return max(-1.0, min(1.0, s / math.sqrt(nx * ny)))


def normal_critical(level: float) -> float:
    """Two-sided standard normal critical value for confidence ``level``."""
    return float(math.sqrt(2.0) * special.erfinv(level))


def fisher_ci(r: float, n: int, level: float = 0.95) -> Tuple[float, float]:
    """Confidence interval for a correlation via the Fisher z-transform."""
    if n < 4:
        raise ValueError("fisher_ci needs n >= 4")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if not abs(r) < 1:
        raise ValueError("degenerate: |r| must be < 1")
    z = math.atanh(r)
    half = normal_critical(level) / math.sqrt(n - 3)
    return math.tanh(z - half), math.tanh(z + half)


def correlations(pairs: Sequence[Tuple[float, float]], level: float = 0.95) -> CorrelationReport:
    """Pearson r, Spearman rho (average ranks), Kendall tau-b and Fisher CI of r.

    The interval is omitted (``None``) when fewer than four pairs are given or
    ``|r| == 1``.
    """
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise ValueError("need at least 2 (x, y) pairs")
    x, y = arr[:, 0], arr[:, 1]
    r = _pearson(x, y)
    rho = _pearson(average_ranks(x), average_ranks(y))
    tau = kendall_tau_b(x, y)
    n = x.size
    ci = fisher_ci(r, n, level) if n >= 4 and abs(r) < 1 else None
    return CorrelationReport(r, rho, tau, ci, n, level)
