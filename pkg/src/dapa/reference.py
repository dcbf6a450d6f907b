"""Double-precision reference activations.

GELU uses the tanh form throughout (the form hardware baselines implement),
so it also serves as the exact target for every approximation error.
"""
from __future__ import annotations

import enum
import math

import numpy as np

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715


class ActivationKind(str, enum.Enum):
    GELU_TANH = "gelu-tanh"
    EXP = "exp"
    # analytically exact target for tests; has no hardware meaning
    IDENTITY = "identity"

    @classmethod
    def parse(cls, value) -> "ActivationKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"gelu": "gelu-tanh", "gelutanh": "gelu-tanh"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown activation kind {value!r} (expected one of {names})") from None


def _checked(x):
    xa = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(xa)):
        raise ValueError("activation input must be finite")
    return xa


def _out(xa, y):
    return float(y) if xa.ndim == 0 else y


def gelu_tanh(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(SQRT_2_OVER_PI * (x + GELU_CUBIC * x**3)))


def gelu_tanh_derivative(x):
    x = np.asarray(x, dtype=np.float64)
    t = np.tanh(SQRT_2_OVER_PI * (x + GELU_CUBIC * x**3))
    du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x**2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def eval_exact(kind, x):
    """Evaluate the reference activation ``kind`` at ``x`` (scalar or array)."""
    kind = ActivationKind.parse(kind)
    xa = _checked(x)
    if kind is ActivationKind.GELU_TANH:
        y = gelu_tanh(xa)
    elif kind is ActivationKind.EXP:
        y = np.exp(xa)
    else:
        y = xa.copy()
    return _out(xa, y)


def eval_exact_derivative(kind, x):
    """Closed-form derivative of the reference activation."""
    kind = ActivationKind.parse(kind)
    xa = _checked(x)
    if kind is ActivationKind.GELU_TANH:
        y = gelu_tanh_derivative(xa)
    elif kind is ActivationKind.EXP:
        y = np.exp(xa)
    else:
        y = np.ones_like(xa)
    return _out(xa, y)


def softmax_exact(v) -> np.ndarray:
    """Max-shifted softmax; every exponent input is <= 0."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input must be finite")
    e = np.exp(v - v.max())
    return e / math.fsum(e)
