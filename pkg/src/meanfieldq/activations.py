"""Bounded smooth activations with first and second derivatives.

Both supported activations are non-polynomial, slowly increasing and twice
continuously differentiable, which is what the kernel positive-definiteness
check relies on.  The second derivative is only consumed by finite-difference
test oracles; the training loops never touch it.
"""

from __future__ import annotations

import numpy as np

from .errors import UnsupportedActivation

TANH = 0
SIGMOID = 1

_NAME_TO_ID = {"tanh": TANH, "sigmoid": SIGMOID}


def activation_id(name: str) -> int:
    """Map an activation name to the integer id used by the compute kernels."""
    try:
        return _NAME_TO_ID[name]
    except KeyError:
        raise UnsupportedActivation(f"unknown activation {name!r}; supported: tanh, sigmoid") from None


def activation(name: str, z):
    """Return (sigma(z), sigma'(z), sigma''(z)), vectorized over z."""
    z = np.asarray(z, dtype=np.float64)
    if name == "tanh":
        s = np.tanh(z)
        d1 = 1.0 - s * s
        d2 = -2.0 * s * d1
        return s, d1, d2
    if name == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        d1 = s * (1.0 - s)
        d2 = d1 * (1.0 - 2.0 * s)
        return s, d1, d2
    raise UnsupportedActivation(f"unknown activation {name!r}; supported: tanh, sigmoid")
