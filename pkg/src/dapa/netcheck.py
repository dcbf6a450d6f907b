"""Desk-scale checks of piecewise activations inside a trainable network.

A small numpy MLP is trained twice from the same initialisation, once with
the exact activation and once with a piecewise table whose backward pass uses
the fitted derivative table (not the slope of the forward pieces).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .distribution import EmpiricalDistribution, from_samples
from .fitter import DapaTable, build_dapa, eval_piecewise
from .metrics import density_cells, dwmse
from .reference import ActivationKind, eval_exact, eval_exact_derivative


class DivergenceError(RuntimeError):
    pass


# -- activations ------------------------------------------------------------------

class ExactActivation:
    name = "exact"

    def __init__(self, kind=ActivationKind.GELU_TANH):
        self.kind = ActivationKind.parse(kind)

    def forward(self, z):
        return eval_exact(self.kind, z)

    def backward(self, z):
        return eval_exact_derivative(self.kind, z)


class DapaActivation:
    name = "dapa"

    def __init__(self, table: DapaTable):
        self.table = table
        self.kind = table.kind

    def forward(self, z):
        return eval_piecewise(self.table, z)

    def backward(self, z):
        return eval_piecewise(self.table, z, derivative=True)


# -- data and network -------------------------------------------------------------

def make_two_moons(n: int = 400, noise: float = 0.15, label_noise: float = 0.05, seed: int = 0):
    """Two interleaved half circles with Gaussian jitter and flipped labels."""
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = np.pi * rng.random(n0)
    t1 = np.pi * rng.random(n1)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    X = np.concatenate([upper, lower]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    flip = rng.random(n) < label_noise
    y[flip] = 1 - y[flip]
    # centre and scale so pre-activations start in a moderate range
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    return X, y


@dataclass
class ToyNet:
    dims: tuple = (2, 32, 32, 2)
    rng_seed: int = 0
    params: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.dims) < 2 or any(int(d) < 1 for d in self.dims):
            raise ValueError("dims must list at least input and output sizes")
        if not self.params:
            rng = np.random.default_rng(self.rng_seed)
            for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
                W = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
                self.params.append([W, np.zeros(fan_out)])

    def copy(self) -> "ToyNet":
        return ToyNet(self.dims, self.rng_seed, [[W.copy(), b.copy()] for W, b in self.params])

    def preactivations(self, X, act) -> List[np.ndarray]:
        """Inputs to every hidden nonlinearity, layer by layer."""
        out = []
        h = X
        for W, b in self.params[:-1]:
            z = h @ W + b
            out.append(z)
            h = act.forward(z)
        return out

    def loss_and_grads(self, X, y, act):
        """Mean cross-entropy and its parameter gradients."""
        hs = [X]
        zs = []
        h = X
        for W, b in self.params[:-1]:
            z = h @ W + b
            zs.append(z)
            h = act.forward(z)
            hs.append(h)
        W, b = self.params[-1]
        logits = h @ W + b
        logits = logits - logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        n = X.shape[0]
        loss = -float(np.mean(logp[np.arange(n), y]))
        g = np.exp(logp)
        g[np.arange(n), y] -= 1.0
        g /= n
        grads = [None] * len(self.params)
        for layer in range(len(self.params) - 1, -1, -1):
            W, _ = self.params[layer]
            grads[layer] = [hs[layer].T @ g, g.sum(axis=0)]
            if layer:
                g = (g @ W.T) * act.backward(zs[layer - 1])
        return loss, grads

    def loss(self, X, y, act) -> float:
        return self.loss_and_grads(X, y, act)[0]

    def sgd_step(self, grads, lr: float):
        for (W, b), (gW, gb) in zip(self.params, grads):
            W -= lr * gW
            b -= lr * gb


# -- training demo ----------------------------------------------------------------

@dataclass
class TrainConfig:
    dims: tuple = (2, 32, 32, 2)
    epochs: int = 200
    lr: float = 0.2
    seeds: tuple = (0, 1, 2, 3, 4)
    segments: int = 16
    kind: str = "gelu-tanh"
    bins: int = 2048
    n_samples: int = 400
    data_seed: int = 1234


@dataclass
class TrainReport:
    curves: Dict[str, List[List[float]]]
    final_losses: Dict[str, List[float]]
    seeds: List[int]
    config: dict = field(default_factory=dict)

    def mean_final(self, variant: str) -> float:
        return float(np.mean(self.final_losses[variant]))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        """Long format: variant, seed, epoch, loss."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "seed", "epoch", "loss"])
        for variant, per_seed in self.curves.items():
            for seed, curve in zip(self.seeds, per_seed):
                for epoch, loss in enumerate(curve):
                    w.writerow([variant, seed, epoch, repr(loss)])
        return buf.getvalue()


def fit_from_initial(net: ToyNet, X, kind, segments: int, bins: int = 2048) -> DapaTable:
    """Fit a table to the pre-activations of a freshly initialised network.

    All hidden layers are pooled into one distribution; the table is then
    frozen for the whole run.
    """
    z = np.concatenate([p.ravel() for p in net.preactivations(X, ExactActivation(kind))])
    return build_dapa(from_samples(z, bins), kind, segments)


def _train(net: ToyNet, X, y, act, epochs: int, lr: float, label: str) -> List[float]:
    curve = []
    for epoch in range(epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                loss, grads = net.loss_and_grads(X, y, act)
            except ValueError as exc:  # activations reject non-finite inputs
                raise DivergenceError(f"{label} diverged at epoch {epoch}: {exc}") from None
        if not math.isfinite(loss):
            raise DivergenceError(f"{label} diverged at epoch {epoch}: loss {loss!r}")
        curve.append(loss)
        if epoch < epochs:
            net.sgd_step(grads, lr)
    return curve


def train_demo(config: Optional[TrainConfig] = None, dataset=None, tables: Optional[Dict[int, DapaTable]] = None) -> TrainReport:
    """Train exact and piecewise twins for every seed and collect loss curves.

    ``tables`` optionally maps seed to a prebuilt table; otherwise one is fit
    from each seed's initial pre-activations.  Curves hold ``epochs + 1``
    losses, the first being the untrained network.
    """
    config = config or TrainConfig()
    if not config.seeds:
        raise ValueError("at least one seed is required")
    if config.epochs < 0:
        raise ValueError("epochs must be >= 0")
    X, y = dataset if dataset is not None else make_two_moons(config.n_samples, seed=config.data_seed)
    kind = ActivationKind.parse(config.kind)
    curves = {"exact": [], "dapa": []}
    for seed in config.seeds:
        base = ToyNet(tuple(config.dims), seed)
        if tables and seed in tables:
            table = tables[seed]
        else:
            table = fit_from_initial(base, X, kind, config.segments, config.bins)
        curves["exact"].append(_train(base.copy(), X, y, ExactActivation(kind), config.epochs, config.lr, f"exact (seed {seed})"))
        curves["dapa"].append(_train(base.copy(), X, y, DapaActivation(table), config.epochs, config.lr, f"dapa (seed {seed})"))
    final = {k: [c[-1] for c in v] for k, v in curves.items()}
    cfg = asdict(config)
    cfg["dims"] = list(config.dims)
    cfg["seeds"] = list(config.seeds)
    return TrainReport(curves, final, list(config.seeds), cfg)


# -- derivative report ------------------------------------------------------------

@dataclass
class GradReport:
    max_abs_error: float
    mean_abs_error: float
    weighted_mean_abs_error: float
    range: tuple
    grid: int

    def to_dict(self) -> dict:
        out = asdict(self)
        out["range"] = list(self.range)
        return out


def grad_report(table: DapaTable, rng=(-4.0, 4.0), grid: int = 10_000,
                d: Optional[EmpiricalDistribution] = None) -> GradReport:
    """Error of the derivative table against the exact derivative.

    The comparison is with the analytic derivative, not with the slope of
    the forward pieces.  The weighted mean uses the density of ``d`` (the
    plain mean when ``d`` is None).
    """
    a, b = float(rng[0]), float(rng[1])
    if not a < b:
        raise ValueError("range requires a < b")
    x = a + (np.arange(grid) + 0.5) * ((b - a) / grid)
    err = np.abs(eval_piecewise(table, x, derivative=True) - eval_exact_derivative(table.kind, x))
    mean = float(np.mean(err))
    weighted = mean
    if d is not None:
        refine = max(1, int(math.ceil(grid / d.bins)))
        xc, w, _ = density_cells(d.bin_edges, d.bin_mass, (a, b), refine)
        errc = np.abs(eval_piecewise(table, xc, derivative=True) - eval_exact_derivative(table.kind, xc))
        weighted = float(np.sum(w * errc))
    return GradReport(float(err.max()), mean, weighted, (a, b), grid)


# -- sample-count study ------------------------------------------------------------

@dataclass
class StudyRow:
    sample_count: int
    segments: int
    mean_dwmse: float
    var_dwmse: float
    trials: int
    values: List[float]
    reference: bool = False


def _draw(source: str, rng: np.random.Generator, n: int) -> np.ndarray:
    if source == "normal":
        return rng.standard_normal(n)
    if source == "skewnormal":
        # mixture with a heavier right shoulder, resembling GELU inputs in MLP blocks
        k = rng.random(n) < 0.8
        return np.where(k, rng.normal(-0.4, 0.8, n), rng.normal(1.5, 1.2, n))
    raise ValueError(f"unknown source {source!r}")


def sample_sensitivity_study(
    sample_counts: Sequence[int] = (1000, 10_000, 100_000),
    segment_list: Sequence[int] = (16,),
    trials: int = 5,
    seed: int = 0,
    kind="gelu-tanh",
    rng=(-4.0, 4.0),
    bins: int = 2048,
    holdout: int = 10**6,
    reference_count: Optional[int] = 10**6,
    source: str = "normal",
) -> List[StudyRow]:
    """Held-out DWMSE of tables fitted from ``count`` fresh draws.

    Every table is scored on one fixed held-out distribution of ``holdout``
    draws.  When ``reference_count`` is set, an extra row fitted from that
    many draws serves as the large-sample reference.
    """
    if trials < 3:
        raise ValueError("trials must be >= 3")
    if any(c < 100 for c in sample_counts):
        raise ValueError("sample counts must be >= 100")
    kind = ActivationKind.parse(kind)
    root = np.random.SeedSequence(seed)
    hold_seq = root.spawn(1)[0]
    held = from_samples(_draw(source, np.random.default_rng(hold_seq), holdout), bins, rng)
    counts = [(int(c), False) for c in sample_counts]
    if reference_count is not None:
        counts.append((int(reference_count), True))
    rows = []
    ref = lambda x: eval_exact(kind, x)  # noqa: E731
    for ci, (count, is_ref) in enumerate(counts):
        for n_seg in segment_list:
            values = []
            for trial in range(trials):
                seq = np.random.SeedSequence([seed, ci, int(n_seg), trial, count])
                d = from_samples(_draw(source, np.random.default_rng(seq), count), bins, rng)
                t = build_dapa(d, kind, n_seg)
                values.append(dwmse(ref, lambda x: eval_piecewise(t, x), held, rng))
            rows.append(StudyRow(count, int(n_seg), float(np.mean(values)),
                                 float(np.var(values, ddof=1)), trials, values, is_ref))
    return rows


def study_to_csv(rows: Sequence[StudyRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_count", "segments", "mean_dwmse", "var_dwmse", "trials", "reference"])
    for r in rows:
        w.writerow([r.sample_count, r.segments, repr(r.mean_dwmse), repr(r.var_dwmse), r.trials, int(r.reference)])
    return buf.getvalue()
