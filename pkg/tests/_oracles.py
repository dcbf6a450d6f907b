"""Independent reference computations shared by the unit and acceptance tests."""
import itertools
import math

import mpmath as mp
import numpy as np

from dapa.quantizer import decode, eval_fixed


def wls_oracle(xs, ys, ws, dps=50):
    """Solve the 2x2 weighted normal equations in extended precision."""
    mp.mp.dps = dps
    W = Sx = Sxx = Sy = Sxy = mp.mpf(0)
    for x, y, w in zip(xs, ys, ws):
        x, y, w = mp.mpf(float(x)), mp.mpf(float(y)), mp.mpf(float(w))
        W += w
        Sx += w * x
        Sxx += w * x * x
        Sy += w * y
        Sxy += w * x * y
    det = W * Sxx - Sx * Sx
    a = (W * Sxy - Sx * Sy) / det
    b = (Sxx * Sy - Sx * Sxy) / det
    return float(a), float(b)


def exp_segment_errors(q_exp):
    """Worst |decoded exp table - exp| per segment, over every non-positive code."""
    io = q_exp.io_format
    codes = np.arange(io.min_code, 1, dtype=np.int64)
    x = decode(io, codes)
    y = decode(io, np.maximum(eval_fixed(q_exp, codes), 0))
    seg = np.searchsorted(q_exp.knots_q[1:-1], codes, side="right")
    out = np.zeros(q_exp.segments)
    np.maximum.at(out, seg, np.abs(y - np.exp(x)))
    return out


def softmax_interval_bound(q_exp, v_codes, seg_err=None):
    """Per-element bound on |decoded softmax_unit output - exact softmax|.

    Each exp term lies in ``[t - E_i, t + E_i]`` where ``E_i`` is the max
    residual of the segment the shifted code falls in (plus ``exp(lo)`` when
    the shift saturates at the bottom of the format).  Pushing those
    intervals through ``e_i / sum(e)`` gives the extreme ratios; one half LSB
    covers the final division rounding.
    """
    io = q_exp.io_format
    if seg_err is None:
        seg_err = exp_segment_errors(q_exp)
    v = np.asarray(v_codes, dtype=np.int64)
    shifted = v - v.max()
    x = decode(io, shifted)
    lo = decode(io, io.min_code)
    seg = np.searchsorted(q_exp.knots_q[1:-1], np.maximum(shifted, io.min_code), side="right")
    t = np.exp(x)
    err = np.where(shifted < io.min_code, seg_err[seg] + math.exp(lo), seg_err[seg])
    t_lo = np.maximum(t - err, 0.0)
    t_hi = t + err
    exact = t / math.fsum(t)
    bound = np.empty_like(t)
    tot_lo, tot_hi = math.fsum(t_lo), math.fsum(t_hi)
    for i in range(t.size):
        low = t_lo[i] / (t_lo[i] + tot_hi - t_hi[i]) if t_lo[i] > 0 else 0.0
        high = t_hi[i] / (t_hi[i] + tot_lo - t_lo[i])
        bound[i] = max(exact[i] - low, high - exact[i])
    return bound + 2.0 ** -(io.frac_bits + 1)


def brute_kendall_b(x, y):
    conc = disc = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        dx, dy = x[i] - x[j], y[i] - y[j]
        if dx == 0 and dy == 0:
            continue
        if dx == 0:
            tx += 1
        elif dy == 0:
            ty += 1
        elif dx * dy > 0:
            conc += 1
        else:
            disc += 1
    return (conc - disc) / math.sqrt((conc + disc + tx) * (conc + disc + ty))


def pearson_textbook(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def brute_ranks(v):
    """Rank = 1 + (#smaller) + (#equal - 1) / 2, counted pair by pair."""
    return [1 + sum(w < u for w in v) + (sum(w == u for w in v) - 1) / 2 for u in v]


def spearman_textbook(x, y):
    return pearson_textbook(brute_ranks(list(x)), brute_ranks(list(y)))


def fisher_textbook(r, n, level=0.95):
    from scipy.stats import norm

    z = 0.5 * math.log((1 + r) / (1 - r))
    half = norm.ppf(0.5 + level / 2) / math.sqrt(n - 3)
    return math.tanh(z - half), math.tanh(z + half)
