"""Command-line interface: ``dapa <command> ...``.

Every command accepts ``--config FILE`` (TOML).  Keys may sit at top level or
under a ``[command]`` table; explicit flags win over the file, and the file
wins over built-in defaults.  Commands that write files also write the
resolved configuration next to their main output as ``<stem>.config.json``.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import hwmodel, netcheck
from .distribution import EmpiricalDistribution, from_samples, read_samples
from .fitter import DapaConfig, DapaTable, build_dapa
from .metrics import approx_report, correlations
from .quantizer import (
    FixedPointFormat,
    QuantizedTable,
    decode,
    eval_fixed,
    export_c_header,
    quantize_table,
    select_format,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_ERROR = 2
EXIT_BUDGET = 3
EXIT_THRESHOLD = 4

DEFAULTS = {
    "fit": {"kind": "gelu-tanh", "segments": 16, "bins": 2048, "clip": None, "format": None,
            "weighting": "distribution", "out": "table.json"},
    "eval": {"range": None, "grid": 100_000, "out": None},
    "quantize": {"theta": 1.05, "bit_max": 16, "range": None, "io_format": None,
                 "out": "qtable.json", "export_header": None},
    "export": {"header": "dapa_table.h"},
    "simulate": {"sweep": False, "input": None, "trace": None, "derivative": False},
    "softmax-sim": {"input": None, "random": None, "length": 16, "seed": 0, "out": None},
    "train-demo": {"seeds": [0, 1, 2, 3, 4], "epochs": 200, "lr": 0.2, "segments": 16,
                   "kind": "gelu-tanh", "out": None, "plot": None},
    "study-samples": {"counts": [1000, 10_000, 100_000], "segments": [16], "trials": 5, "seed": 0,
                      "holdout": 10**6, "reference_count": 10**6, "out": None, "csv": None},
    "stats": {"level": 0.95, "out": None},
}


class CliError(Exception):
    def __init__(self, message, code=EXIT_ERROR):
        super().__init__(message)
        self.code = code


def _resolve(args, command: str) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        with open(args.config, "rb") as fh:
            data = tomllib.load(fh)
        section = data.get(command, {})
        flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
        for source in (flat, section):
            for key, value in source.items():
                cfg[key.replace("-", "_")] = value
    for key in DEFAULTS[command]:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            cfg[key] = value
    return cfg


def _write_config(cfg: dict, out_path, extra: Optional[dict] = None) -> None:
    if out_path is None:
        return
    out_path = Path(out_path)
    data = dict(cfg)
    if extra:
        data.update(extra)
    out_path.with_name(out_path.stem + ".config.json").write_text(json.dumps(data, indent=1, default=str), encoding="utf-8")


def _sibling(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def _load_table(path) -> DapaTable:
    try:
        return DapaTable.from_json(Path(path))
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read table {path}: {exc}") from None


def _load_dist(path) -> EmpiricalDistribution:
    try:
        return EmpiricalDistribution.from_json(Path(path))
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read distribution {path}: {exc}") from None


def _load_qtable(path) -> QuantizedTable:
    try:
        return QuantizedTable.from_json(Path(path))
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"malformed quantized table {path}: {exc}") from None


def _range(value, fallback):
    if value is None:
        return fallback
    return float(value[0]), float(value[1])


# -- commands ---------------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = _resolve(args, "fit")
    try:
        samples = read_samples(args.samples, cfg["format"])
    except OSError as exc:
        raise CliError(f"cannot read {args.samples}: {exc}") from None
    clip = None if cfg["clip"] is None else (float(cfg["clip"][0]), float(cfg["clip"][1]))
    d = from_samples(samples, int(cfg["bins"]), clip)
    table = build_dapa(d, cfg["kind"], int(cfg["segments"]), DapaConfig(weighting=cfg["weighting"]))
    report = approx_report(table, d, d.range)
    out = Path(cfg["out"])
    table.to_json(out)
    d.to_json(_sibling(out, ".dist.json"))
    Path(_sibling(out, ".report.json")).write_text(json.dumps(report.to_dict(), indent=1), encoding="utf-8")
    _write_config(cfg, out, {"command": "fit", "samples": str(args.samples)})
    print(f"wrote {out} ({table.segments} segments, {table.knots.size} knots)")
    print(f"mse {report.mse:.6e}  dwmse {report.dwmse:.6e}  range [{report.range[0]}, {report.range[1]}]")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args, "eval")
    table = _load_table(args.table)
    d = _load_dist(args.dist)
    report = approx_report(table, d, _range(cfg["range"], d.range), int(cfg["grid"]))
    text = json.dumps(report.to_dict(), indent=1)
    if cfg["out"]:
        Path(cfg["out"]).write_text(text, encoding="utf-8")
        _write_config(cfg, cfg["out"], {"command": "eval"})
    print(text)
    rows = [("mse", f"{report.mse:.12e}"), ("dwmse", f"{report.dwmse:.12e}"),
            ("range", f"[{report.range[0]}, {report.range[1]}]"), ("grid", str(report.eval_grid_size))]
    for key, value in rows:
        print(f"{key:<6} {value}")
    return 0


def cmd_quantize(args) -> int:
    cfg = _resolve(args, "quantize")
    table = _load_table(args.table)
    d = _load_dist(args.dist)
    rng = _range(cfg["range"], (float(table.knots[0]), float(table.knots[-1])))
    print(f"theta: {cfg['theta']}")
    status = {}
    if cfg["io_format"]:
        fmt = FixedPointFormat.parse(cfg["io_format"])
        met = True
    else:
        try:
            sel = select_format(table, d, rng, float(cfg["theta"]), int(cfg["bit_max"]))
        except ValueError as exc:
            code = EXIT_BUDGET if "budget" in str(exc) else EXIT_ERROR
            raise CliError(str(exc), code) from None
        fmt, met = sel.format, sel.threshold_met
        status = sel.to_dict()
    try:
        q = quantize_table(table, fmt)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(cfg["out"])
    q.to_json(out)
    if cfg["export_header"]:
        export_c_header(q, cfg["export_header"])
    _write_config(cfg, out, {"command": "quantize", "selection": status})
    print(f"format: {fmt}")
    print(f"threshold_met: {str(met).lower()}")
    if not met:
        print("warning: bit budget exhausted before the DWMSE threshold was met", file=sys.stderr)
        return EXIT_THRESHOLD
    return 0


def cmd_export(args) -> int:
    cfg = _resolve(args, "export")
    q = _load_qtable(args.qtable)
    export_c_header(q, cfg["header"])
    print(f"wrote {cfg['header']}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _resolve(args, "simulate")
    q = _load_qtable(args.qtable)
    deriv = bool(cfg["derivative"])
    print(f"stages: {hwmodel.pipeline_depth(q.segments)}")
    if cfg["sweep"]:
        traces = hwmodel.sweep(q, derivative=deriv)
        codes = q.io_format.codes()
        got = np.array([t.output_code for t in traces], dtype=np.int64)
        mismatches = int(np.count_nonzero(got != eval_fixed(q, codes, deriv)))
        if cfg["trace"]:
            hwmodel.write_trace(traces, cfg["trace"])
        print(f"codes: {codes.size}")
        print(f"mismatches: {mismatches}")
        return 0 if mismatches == 0 else 1
    if not cfg["input"]:
        raise CliError("simulate needs --sweep or --input CODE ...")
    traces = [hwmodel.simulate_lookup(q, int(c), deriv) for c in cfg["input"]]
    for t in traces:
        print(t.to_line())
    if cfg["trace"]:
        hwmodel.write_trace(traces, cfg["trace"])
    return 0


def cmd_softmax_sim(args) -> int:
    cfg = _resolve(args, "softmax-sim")
    q = _load_qtable(args.qtable)
    if cfg["input"]:
        vectors = [[int(c) for c in cfg["input"]]]
    elif cfg["random"]:
        rng = np.random.default_rng(int(cfg["seed"]))
        io = q.io_format
        vectors = rng.integers(io.min_code // 2, io.max_code // 2, size=(int(cfg["random"]), int(cfg["length"]))).tolist()
    else:
        raise CliError("softmax-sim needs --input CODE ... or --random COUNT")
    results = []
    for v in vectors:
        out = hwmodel.softmax_unit(q, v)
        results.append({"input": v, "output": out, "decoded": decode(q.io_format, out).tolist()})
    text = json.dumps(results if len(results) > 1 else results[0], indent=1)
    if cfg["out"]:
        Path(cfg["out"]).write_text(text, encoding="utf-8")
        _write_config(cfg, cfg["out"], {"command": "softmax-sim"})
    print(text)
    return 0


def cmd_train_demo(args) -> int:
    cfg = _resolve(args, "train-demo")
    tc = netcheck.TrainConfig(epochs=int(cfg["epochs"]), lr=float(cfg["lr"]),
                              seeds=tuple(int(s) for s in cfg["seeds"]),
                              segments=int(cfg["segments"]), kind=cfg["kind"])
    try:
        report = netcheck.train_demo(tc)
    except netcheck.DivergenceError as exc:
        raise CliError(str(exc)) from None
    if cfg["out"]:
        Path(cfg["out"]).write_text(report.to_json(), encoding="utf-8")
        _write_config(cfg, cfg["out"], {"command": "train-demo"})
    if cfg["plot"]:
        Path(cfg["plot"]).write_text(report.to_csv(), encoding="utf-8")
    ex, da = report.mean_final("exact"), report.mean_final("dapa")
    print(f"mean final loss  exact {ex:.6f}  dapa {da:.6f}  ratio {da / ex:.4f}")
    return 0


def cmd_study_samples(args) -> int:
    cfg = _resolve(args, "study-samples")
    ref = cfg["reference_count"]
    rows = netcheck.sample_sensitivity_study(
        [int(c) for c in cfg["counts"]], [int(n) for n in cfg["segments"]], int(cfg["trials"]),
        int(cfg["seed"]), holdout=int(cfg["holdout"]), reference_count=None if not ref else int(ref))
    if cfg["out"]:
        Path(cfg["out"]).write_text(json.dumps([r.__dict__ for r in rows], indent=1), encoding="utf-8")
        _write_config(cfg, cfg["out"], {"command": "study-samples"})
    if cfg["csv"]:
        Path(cfg["csv"]).write_text(netcheck.study_to_csv(rows), encoding="utf-8")
    print(f"{'count':>9} {'N':>4} {'mean dwmse':>14} {'variance':>12}")
    for r in rows:
        tag = "  (reference)" if r.reference else ""
        print(f"{r.sample_count:>9} {r.segments:>4} {r.mean_dwmse:>14.6e} {r.var_dwmse:>12.3e}{tag}")
    return 0


def read_pairs(path):
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                pairs.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if pairs:
                    raise CliError(f"{path}: cannot parse row {row!r}") from None
                # first unparsable row is a header
    return pairs


def cmd_stats(args) -> int:
    cfg = _resolve(args, "stats")
    try:
        report = correlations(read_pairs(args.pairs), float(cfg["level"]))
    except OSError as exc:
        raise CliError(f"cannot read {args.pairs}: {exc}") from None
    text = json.dumps(report.to_dict(), indent=1)
    if cfg["out"]:
        Path(cfg["out"]).write_text(text, encoding="utf-8")
    print(text)
    print(report.to_text())
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dapa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="TOML file with default options")
        sp.set_defaults(func=func)
        return sp

    sp = add("fit", cmd_fit, "fit a piecewise table to samples")
    sp.add_argument("samples", help="text (one float per line) or raw float32 LE (.f32/.bin/.raw)")
    sp.add_argument("--kind")
    sp.add_argument("--segments", type=int)
    sp.add_argument("--bins", type=int)
    sp.add_argument("--clip", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--format", choices=("text", "f32"))
    sp.add_argument("--weighting", choices=("distribution", "uniform"))
    sp.add_argument("--out")

    sp = add("eval", cmd_eval, "score a table against its reference")
    sp.add_argument("table")
    sp.add_argument("dist")
    sp.add_argument("--range", type=float, nargs=2, metavar=("A", "B"))
    sp.add_argument("--grid", type=int)
    sp.add_argument("--out")

    sp = add("quantize", cmd_quantize, "select a fixed-point format and quantize a table")
    sp.add_argument("table")
    sp.add_argument("dist")
    sp.add_argument("--theta", type=float)
    sp.add_argument("--bit-max", dest="bit_max", type=int)
    sp.add_argument("--range", type=float, nargs=2, metavar=("A", "B"))
    sp.add_argument("--io-format", dest="io_format", help="skip selection and use this Qm.n")
    sp.add_argument("--out")
    sp.add_argument("--export-header", dest="export_header")

    sp = add("export", cmd_export, "write a quantized table as a C header")
    sp.add_argument("qtable")
    sp.add_argument("--header")

    sp = add("simulate", cmd_simulate, "run the lookup pipeline model")
    sp.add_argument("qtable")
    sp.add_argument("--sweep", action="store_true")
    sp.add_argument("--input", nargs="+", type=int, metavar="CODE")
    sp.add_argument("--trace", help="write tab-separated trace lines here")
    sp.add_argument("--derivative", action="store_true")

    sp = add("softmax-sim", cmd_softmax_sim, "run the fixed-point softmax unit")
    sp.add_argument("qtable", help="quantized exponential table")
    sp.add_argument("--input", nargs="+", type=int, metavar="CODE")
    sp.add_argument("--random", type=int, metavar="COUNT")
    sp.add_argument("--length", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")

    sp = add("train-demo", cmd_train_demo, "train exact and piecewise twin networks")
    sp.add_argument("--seeds", type=int, nargs="+")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--segments", type=int)
    sp.add_argument("--kind")
    sp.add_argument("--out")
    sp.add_argument("--plot", help="write loss curves as CSV")

    sp = add("study-samples", cmd_study_samples, "sample-count sensitivity study")
    sp.add_argument("--counts", type=int, nargs="+")
    sp.add_argument("--segments", type=int, nargs="+")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--holdout", type=int)
    sp.add_argument("--reference-count", dest="reference_count", type=int)
    sp.add_argument("--out")
    sp.add_argument("--csv")

    sp = add("stats", cmd_stats, "correlation statistics of (x, y) pairs from CSV")
    sp.add_argument("pairs")
    sp.add_argument("--level", type=float)
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, OverflowError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
