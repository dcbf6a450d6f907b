"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line; the lines are repeated in the pytest
terminal summary.  Run alone with ``pytest tests/test_acceptance.py -s``.
"""
import json
import math

import numpy as np
import pytest

from dapa.distribution import from_samples
from dapa.fitter import DapaConfig, DapaTable, build_dapa, fit_segment_wls, segment_points
from dapa.hwmodel import count_mismatches, pipeline_depth, simulate_lookup, softmax_unit
from dapa.metrics import approx_report, correlations, density_cells, dwmse
from dapa.netcheck import TrainConfig, sample_sensitivity_study, train_demo
from dapa.quantizer import (
    FixedPointFormat,
    QuantizedTable,
    decode,
    encode,
    export_c_header,
    parse_c_header,
    quantize_table,
    select_format,
)
from dapa.reference import eval_exact, softmax_exact

from _oracles import (
    brute_kendall_b,
    exp_segment_errors,
    fisher_textbook,
    pearson_textbook,
    softmax_interval_bound,
    spearman_textbook,
    wls_oracle,
)
from _report import criterion

Q313 = FixedPointFormat(3, 13)
Q412 = FixedPointFormat(4, 12)


@pytest.fixture(scope="module")
def skewed_dist():
    rng = np.random.default_rng(17)
    return from_samples(rng.gamma(2.0, 0.6, 100_000) - 2.5, 2048, (-4, 4))


def test_01_wls_oracle():
    with criterion(1, "WLS matches extended-precision normal equations", limit=10) as info:
        rng = np.random.default_rng(101)
        worst = 0.0
        for _ in range(200):
            kind = ("gelu-tanh", "exp")[rng.integers(2)]
            lo, hi = np.sort(rng.uniform(-6, 6, 2))
            k = int(rng.integers(3, 200))
            xs = rng.uniform(lo, hi, k)
            ws = rng.uniform(0.01, 5.0, k)
            a, b = fit_segment_wls(kind, xs, ws)
            oa, ob = wls_oracle(xs, eval_exact(kind, xs), ws)
            worst = max(worst, abs(a - oa), abs(b - ob))
        info["max_abs_diff"] = f"{worst:.2e}"
        assert worst <= 1e-9


def test_02_orthogonality(normal_dist, skewed_dist, softmax_shift_dist):
    with criterion(2, "residuals orthogonal to 1 and x in every segment") as info:
        cases = [(normal_dist, "gelu-tanh", n, DapaConfig()) for n in (4, 16, 64)]
        cases += [(normal_dist, "gelu-tanh", 16, DapaConfig(use_samples=False)),
                  (skewed_dist, "gelu-tanh", 16, DapaConfig()), (skewed_dist, "exp", 16, DapaConfig()),
                  (softmax_shift_dist, "exp", 16, DapaConfig()),
                  (normal_dist, "gelu-tanh", 16, DapaConfig(weighting="uniform"))]
        worst = 0.0
        segs = 0
        for d, kind, n, cfg in cases:
            t = build_dapa(d, kind, n, cfg)
            for i, (xs, ws) in enumerate(segment_points(d, t.knots, cfg)):
                a, b = t.fwd_coeffs[i]
                r = eval_exact(kind, xs) - (a * xs + b)
                scale = math.fsum(ws)
                worst = max(worst, abs(math.fsum(ws * r)) / scale, abs(math.fsum(ws * xs * r)) / scale)
                segs += 1
        info["segments"] = segs
        info["max_rel"] = f"{worst:.1e}"
        assert worst <= 1e-8


def test_03_refinement(normal_dist):
    with criterion(3, "DWMSE(N=64) < DWMSE(N=16) < DWMSE(N=4)", limit=30) as info:
        vals = {n: approx_report(build_dapa(normal_dist, "gelu-tanh", n), normal_dist, (-4, 4)).dwmse
                for n in (4, 16, 64)}
        info.update({f"N{n}": f"{v:.3e}" for n, v in vals.items()})
        assert vals[64] < vals[16] < vals[4]


@pytest.mark.parametrize("kind", ["gelu-tanh", "exp"])
def test_04_dwmse_dominance(kind, skewed_dist):
    label = "4a" if kind == "gelu-tanh" else "4b"
    with criterion(label, f"DWMSE-fit <= MSE-fit on shared knots ({kind})") as info:
        f = lambda x: eval_exact(kind, x)  # noqa: E731
        dw = build_dapa(skewed_dist, kind, 16)
        ms = build_dapa(skewed_dist, kind, 16, DapaConfig(weighting="uniform"))
        assert np.array_equal(dw.knots, ms.knots)
        a, b = dwmse(f, dw, skewed_dist, (-4, 4)), dwmse(f, ms, skewed_dist, (-4, 4))
        info["dwmse_fit"] = f"{a:.3e}"
        info["mse_fit"] = f"{b:.3e}"
        assert a <= b


def _recomputed_quantized_dwmse(t, d, rng, fmt):
    # independent route: integer pipeline model on the density cells
    q = quantize_table(t, fmt)
    x, w, _ = density_cells(d.bin_edges, d.bin_mass, rng)
    codes, _ = encode(fmt, x)
    y = decode(fmt, np.array([simulate_lookup(q, int(c)).output_code for c in codes]))
    err = (eval_exact(t.kind, x) - y) ** 2
    return math.fsum(w * err) / (rng[1] - rng[0])


def test_05_format_selection(gelu16, normal_dist):
    with criterion(5, "format search: m=3, m+n<=16, quantized <= 1.05 x float") as info:
        sel = select_format(gelu16, normal_dist, (-4, 4), 1.05)
        info["format"] = str(sel.format)
        info["threshold_met"] = sel.threshold_met
        assert sel.format.int_bits == 3
        assert sel.format.total <= 16
        if sel.threshold_met:
            fp = dwmse(lambda x: eval_exact("gelu-tanh", x), gelu16, normal_dist, (-4, 4))
            qd = _recomputed_quantized_dwmse(gelu16, normal_dist, (-4, 4), sel.format)
            info["ratio"] = f"{qd / fp:.4f}"
            assert qd <= 1.05 * fp


def test_06_exhaustive_equivalence(gelu16, exp16, normal_dist):
    tables = [quantize_table(gelu16, Q313), quantize_table(exp16, Q412),
              quantize_table(build_dapa(normal_dist, "identity", 16), Q313)]
    with criterion(6, "pipeline model == eval_fixed on all 65536 codes x 3 tables", limit=5) as info:
        miss = [count_mismatches(q) for q in tables]
        info["mismatches"] = miss
        assert all(q.io_format.total == 16 for q in tables)
        assert miss == [0, 0, 0]


def test_07_pipeline_depth():
    with criterion(7, "pipeline depth N=8 -> 4, N=16 -> 5") as info:
        info["depths"] = (pipeline_depth(8), pipeline_depth(16))
        assert pipeline_depth(8) == 4 and pipeline_depth(16) == 5


def test_08_softmax(exp16):
    with criterion(8, "fixed-point softmax within interval bound, sums, shift invariance") as info:
        q = quantize_table(exp16, Q412)
        seg_err = exp_segment_errors(q)
        rng = np.random.default_rng(808)
        worst_ratio = 0.0
        worst_sum = 0.0
        for _ in range(1000):
            codes, _ = encode(Q412, rng.normal(0.0, 2.0, 16))
            out = softmax_unit(q, codes)
            got = decode(Q412, out)
            err = np.abs(got - softmax_exact(decode(Q412, codes)))
            bound = softmax_interval_bound(q, codes, seg_err)
            worst_ratio = max(worst_ratio, float(np.max(err / bound)))
            worst_sum = max(worst_sum, abs(got.sum() - 1.0))
            room = (Q412.max_code - codes.max(), Q412.min_code - codes.min())
            shift = int(rng.integers(room[1], room[0] + 1))
            assert softmax_unit(q, codes + shift) == out
        info["max_err/bound"] = f"{worst_ratio:.3f}"
        info["max_sum_dev_lsb"] = f"{worst_sum / Q412.lsb:.1f}"
        assert worst_ratio <= 1.0
        assert worst_sum <= 17 * Q412.lsb


def test_09_sample_insensitivity():
    with criterion(9, "held-out DWMSE spread across 1e3/1e4/1e5 samples < 10%", limit=60) as info:
        rows = sample_sensitivity_study((1000, 10_000, 100_000), (16,), trials=5, seed=0)
        means = [r.mean_dwmse for r in rows if not r.reference]
        spread = (max(means) - min(means)) / min(means)
        info["means"] = [f"{m:.4e}" for m in means]
        info["spread"] = f"{spread:.2%}"
        assert spread < 0.10


def test_10_training_parity():
    with criterion(10, "DAPA(16) mean final loss <= 1.05 x exact over 5 seeds", limit=120) as info:
        rep = train_demo(TrainConfig(seeds=(0, 1, 2, 3, 4)))
        ex, da = rep.mean_final("exact"), rep.mean_final("dapa")
        info["exact"] = f"{ex:.5f}"
        info["dapa"] = f"{da:.5f}"
        info["ratio"] = f"{da / ex:.4f}"
        for curves in rep.curves.values():
            assert all(np.all(np.isfinite(c)) for c in curves)
        assert da <= 1.05 * ex


def test_11_statistics():
    with criterion(11, "correlations vs brute-force and textbook formulas") as info:
        rng = np.random.default_rng(1111)
        worst_coef = worst_ci = 0.0
        for i in range(100):
            n = int(rng.integers(5, 60))
            if i % 3 == 0:  # heavy ties
                x = rng.integers(0, 6, n).astype(float)
                y = x + rng.integers(-2, 3, n)
            else:
                x = rng.normal(size=n)
                y = rng.uniform(-1, 1) * x + rng.normal(size=n)
            if np.ptp(x) == 0 or np.ptp(y) == 0:
                continue
            rep = correlations(list(zip(x, y)))
            r = pearson_textbook(x, y)
            worst_coef = max(worst_coef, abs(rep.pearson_r - r),
                             abs(rep.spearman_rho - spearman_textbook(x, y)),
                             abs(rep.kendall_tau - brute_kendall_b(x, y)))
            lo, hi = fisher_textbook(r, n)
            worst_ci = max(worst_ci, abs(rep.fisher_ci[0] - lo), abs(rep.fisher_ci[1] - hi))
        info["coef_diff"] = f"{worst_coef:.1e}"
        info["ci_diff"] = f"{worst_ci:.1e}"
        assert worst_coef <= 1e-12
        assert worst_ci <= 1e-6


def test_12_round_trips(gelu16, exp16, tmp_path):
    with criterion(12, "table JSON, quantized JSON and C header round trips") as info:
        n = 0
        for t in (gelu16, exp16):
            back = DapaTable.from_json(t.to_json())
            assert back == t and back.fingerprint() == t.fingerprint()
            for key in ("knots", "fwd_coeffs", "deriv_coeffs", "segment_mass"):
                assert np.array_equal(getattr(back, key), getattr(t, key))
            q = quantize_table(t, Q313 if t is gelu16 else Q412)
            assert QuantizedTable.from_json(q.to_json()) == q
            path = tmp_path / f"t{n}.h"
            export_c_header(q, path)
            assert parse_c_header(path.read_text()) == q
            n += 1
        info["tables"] = n
