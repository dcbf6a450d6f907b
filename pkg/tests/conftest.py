import numpy as np
import pytest

from dapa import build_dapa, from_samples


@pytest.fixture(scope="session")
def normal_samples():
    return np.random.default_rng(20240101).standard_normal(100_000)


@pytest.fixture(scope="session")
def normal_dist(normal_samples):
    return from_samples(normal_samples, 2048, (-4.0, 4.0))


@pytest.fixture(scope="session")
def uniform_dist():
    return from_samples(np.linspace(0.0, 1.0, 1001), 10)


@pytest.fixture(scope="session")
def gelu16(normal_dist):
    return build_dapa(normal_dist, "gelu-tanh", 16)


@pytest.fixture(scope="session")
def softmax_shift_dist():
    # inputs to exp after max-shifting random logit vectors: all <= 0
    rng = np.random.default_rng(7)
    v = rng.normal(0.0, 2.0, size=(20_000, 16))
    shifted = (v - v.max(axis=1, keepdims=True)).ravel()
    return from_samples(shifted, 2048, (-8.0, 0.0))


@pytest.fixture(scope="session")
def exp16(softmax_shift_dist):
    return build_dapa(softmax_shift_dist, "exp", 16)


@pytest.fixture(scope="session")
def open_exp_dist():
    # same logits without the max entries, so there is no atom at 0
    rng = np.random.default_rng(7)
    v = rng.normal(0.0, 2.0, size=(20_000, 16))
    shifted = (v - v.max(axis=1, keepdims=True)).ravel()
    return from_samples(shifted[shifted < 0], 2048, (-8.0, 0.0))


@pytest.fixture(scope="session")
def open_exp16(open_exp_dist):
    return build_dapa(open_exp_dist, "exp", 16)


def pytest_terminal_summary(terminalreporter):
    import _report

    if _report.LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_report.LINES, key=_report.order):
            terminalreporter.write_line(_report.LINES[num])
