import mpmath as mp
import numpy as np
import pytest

from dapa.reference import ActivationKind, eval_exact, eval_exact_derivative, softmax_exact

# 60-digit mpmath evaluation of 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))) at x = 1
GELU_TANH_AT_1 = 0.841191990608276704781995777045


def test_exact_values():
    assert eval_exact("gelu-tanh", 0.0) == 0.0
    assert eval_exact(ActivationKind.EXP, 0.0) == 1.0
    assert eval_exact("gelu-tanh", 1.0) == pytest.approx(GELU_TANH_AT_1, abs=1e-15)
    assert eval_exact("identity", -2.5) == -2.5


def test_derivative_values():
    assert eval_exact_derivative("gelu-tanh", 0.0) == 0.5
    assert eval_exact_derivative("exp", 0.0) == 1.0
    assert eval_exact_derivative("identity", 3.0) == 1.0


def test_derivative_matches_finite_differences():
    x = np.random.default_rng(0).uniform(-4, 4, 128)
    h = 1e-5
    fd = (eval_exact("gelu-tanh", x + h) - eval_exact("gelu-tanh", x - h)) / (2 * h)
    np.testing.assert_allclose(eval_exact_derivative("gelu-tanh", x), fd, atol=1e-6)


@pytest.mark.parametrize("kind", ["gelu-tanh", "exp"])
def test_derivative_on_wide_grid(kind):
    x = np.linspace(-8, 8, 2001)
    h = 1e-5
    fd = (eval_exact(kind, x + h) - eval_exact(kind, x - h)) / (2 * h)
    # exp(8) ~ 3e3 so compare relative to magnitude there
    scale = np.maximum(1.0, np.abs(eval_exact(kind, x)))
    assert np.max(np.abs(eval_exact_derivative(kind, x) - fd) / scale) < 1e-6


def test_gelu_asymptotes():
    assert abs(eval_exact("gelu-tanh", 10.0) - 10.0) < 1e-9
    assert abs(eval_exact("gelu-tanh", -10.0)) < 1e-9


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        eval_exact("gelu-tanh", float("nan"))
    with pytest.raises(ValueError):
        eval_exact_derivative("exp", [0.0, float("inf")])
    with pytest.raises(ValueError):
        ActivationKind.parse("swish")


def test_softmax_examples():
    np.testing.assert_allclose(softmax_exact([0, 0, 0]), [1 / 3] * 3, atol=1e-15)
    for c in (-50.0, 0.0, 3.7, 400.0):
        np.testing.assert_allclose(softmax_exact([c, c + np.log(2)]), [1 / 3, 2 / 3], atol=1e-12)
    with pytest.raises(ValueError):
        softmax_exact([])


def test_softmax_matches_extended_precision():
    rng = np.random.default_rng(11)
    mp.mp.dps = 50
    for _ in range(20):
        v = rng.normal(0, 3, 16)
        e = [mp.exp(mp.mpf(float(x))) for x in v]
        s = mp.fsum(e)
        oracle = np.array([float(x / s) for x in e])
        out = softmax_exact(v)
        np.testing.assert_allclose(out, oracle, atol=1e-12)
        assert abs(out.sum() - 1) < 1e-12
        assert np.all((out > 0) & (out <= 1))


def test_softmax_shift_invariance():
    v = np.random.default_rng(5).normal(0, 2, 32)
    np.testing.assert_allclose(softmax_exact(v), softmax_exact(v + 123.0), atol=1e-12)
