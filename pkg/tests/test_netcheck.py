import json

import numpy as np
import pytest

from dapa.fitter import build_dapa
from dapa.netcheck import (
    DapaActivation,
    DivergenceError,
    ExactActivation,
    ToyNet,
    TrainConfig,
    fit_from_initial,
    grad_report,
    make_two_moons,
    sample_sensitivity_study,
    study_to_csv,
    train_demo,
)

SMALL = dict(dims=(2, 8, 8, 2), epochs=20, seeds=(0, 1), n_samples=120)


def test_two_moons_shape():
    X, y = make_two_moons(200, seed=3)
    assert X.shape == (200, 2) and y.shape == (200,)
    np.testing.assert_allclose(X.mean(axis=0), 0, atol=1e-12)
    assert set(np.unique(y)) == {0, 1}


def test_identity_tables_give_identical_curves():
    rep = train_demo(TrainConfig(kind="identity", **SMALL))
    for a, b in zip(rep.curves["exact"], rep.curves["dapa"]):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_zero_epochs_share_initial_loss():
    rep = train_demo(TrainConfig(**{**SMALL, "epochs": 0}))
    assert all(len(c) == 1 for c in rep.curves["exact"])
    # same init per seed; only the activation differs, so losses agree closely
    for e, d in zip(rep.final_losses["exact"], rep.final_losses["dapa"]):
        assert d == pytest.approx(e, rel=1e-2)
    rep_id = train_demo(TrainConfig(kind="identity", **{**SMALL, "epochs": 0}))
    for e, d in zip(rep_id.final_losses["exact"], rep_id.final_losses["dapa"]):
        assert d == pytest.approx(e, abs=1e-12)


def test_curve_lengths_and_training_helps():
    rep = train_demo(TrainConfig(**SMALL))
    assert rep.seeds == [0, 1]
    for variant in ("exact", "dapa"):
        for c in rep.curves[variant]:
            assert len(c) == SMALL["epochs"] + 1
            assert np.all(np.isfinite(c))
            assert c[-1] < c[0]


def test_determinism():
    a = train_demo(TrainConfig(**SMALL))
    b = train_demo(TrainConfig(**SMALL))
    assert a.to_json() == b.to_json()


def test_report_serialisation():
    rep = train_demo(TrainConfig(**{**SMALL, "epochs": 3}))
    d = json.loads(rep.to_json())
    assert set(d) == {"curves", "final_losses", "seeds", "config"}
    rows = rep.to_csv().splitlines()
    assert rows[0] == "variant,seed,epoch,loss"
    assert len(rows) == 1 + 2 * 2 * 4


def test_divergence_reported():
    with pytest.raises(DivergenceError, match=r"exact \(seed 0\) diverged at epoch \d+"):
        train_demo(TrainConfig(**{**SMALL, "lr": 1e6, "epochs": 50}))


def test_rejects_empty_seeds():
    with pytest.raises(ValueError, match="seed"):
        train_demo(TrainConfig(**{**SMALL, "seeds": ()}))


def test_backward_uses_derivative_table(gelu16):
    # the Dapa backward is the derivative table, not the slope of the forward pieces
    act = DapaActivation(gelu16)
    z = np.linspace(-3, 3, 101)
    slopes = gelu16.fwd_coeffs[gelu16.segment_index(z), 0]
    assert not np.allclose(act.backward(z), slopes)


# -- grad_report ------------------------------------------------------------------------

def test_grad_report_identity(normal_dist):
    r = grad_report(build_dapa(normal_dist, "identity", 16))
    assert r.max_abs_error <= 1e-12


def test_grad_report_weighted_below_unweighted(gelu16, normal_dist):
    weighted = grad_report(gelu16, (-3, 3), d=normal_dist).weighted_mean_abs_error
    plain = grad_report(gelu16, (-4, 4)).mean_abs_error
    assert weighted < plain


def test_grad_report_refines(normal_dist):
    coarse = grad_report(build_dapa(normal_dist, "gelu", 4), d=normal_dist)
    fine = grad_report(build_dapa(normal_dist, "gelu", 64), d=normal_dist)
    assert fine.weighted_mean_abs_error < coarse.weighted_mean_abs_error


def test_gradient_flow_matches_fd_up_to_table_error():
    X, y = make_two_moons(64, seed=5)
    net = ToyNet((2, 8, 8, 2), 3)
    table = fit_from_initial(net, X, "gelu", 16)
    act = DapaActivation(table)
    _, grads = net.loss_and_grads(X, y, act)
    h = 1e-6
    diffs, fds = [], []
    for layer, (W, _) in enumerate(net.params):
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + h
            up = net.loss(X, y, act)
            W[idx] = old - h
            down = net.loss(X, y, act)
            W[idx] = old
            fd = (up - down) / (2 * h)
            fds.append(fd)
            diffs.append(abs(grads[layer][0][idx] - fd))
    bound = grad_report(table).max_abs_error
    disc = max(diffs)
    assert disc <= 10 * bound * max(abs(v) for v in fds)
    assert disc > 0  # the derivative table is not the forward slope


def test_exact_gradient_matches_fd():
    # sanity for the backward pass itself
    X, y = make_two_moons(32, seed=9)
    net = ToyNet((2, 4, 2), 1)
    act = ExactActivation("gelu")
    _, grads = net.loss_and_grads(X, y, act)
    W = net.params[0][0]
    h = 1e-6
    for idx in np.ndindex(W.shape):
        old = W[idx]
        W[idx] = old + h
        up = net.loss(X, y, act)
        W[idx] = old - h
        down = net.loss(X, y, act)
        W[idx] = old
        assert grads[0][0][idx] == pytest.approx((up - down) / (2 * h), abs=1e-8)


# -- sample study ------------------------------------------------------------------------

def test_small_study():
    rows = sample_sensitivity_study((200, 2000), (4,), trials=3, seed=1,
                                    holdout=20_000, reference_count=20_000)
    assert [r.sample_count for r in rows] == [200, 2000, 20_000]
    assert rows[-1].reference and not rows[0].reference
    for r in rows:
        assert len(r.values) == 3 and r.mean_dwmse > 0 and r.var_dwmse >= 0
    csv = study_to_csv(rows).splitlines()
    assert csv[0].startswith("sample_count,segments") and len(csv) == 4


def test_study_deterministic():
    kw = dict(sample_counts=(300,), segment_list=(4,), trials=3, seed=2, holdout=5000, reference_count=None)
    assert sample_sensitivity_study(**kw) == sample_sensitivity_study(**kw)


@pytest.mark.parametrize("kw,msg", [(dict(trials=2), "trials"), (dict(sample_counts=(50,)), "counts")])
def test_study_rejects(kw, msg):
    with pytest.raises(ValueError, match=msg):
        sample_sensitivity_study(**kw)
