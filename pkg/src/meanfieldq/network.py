"""Single hidden layer with 1/sqrt(N) output scaling, and its particle view.

A network of width N is the particle system {(c_i, w_i)}; the output at an
input zeta is (1/sqrt(N)) * sum_i c_i * sigma(w_i . zeta).  Finite-horizon
networks carry one output weight per time slice, c of shape (N, J), with the
hidden weights w shared across slices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import activation, activation_id
from .backend import get_kernels
from .errors import DimensionMismatch, UnsupportedLaw

MOMENT_KEYS = ("1", "c", "c2", "w1", "w_norm2", "c_w1")

C_LAWS = ("uniform", "two_point")
W_LAWS = ("normal", "uniform")


@dataclass(frozen=True)
class InitLaw:
    """Product law for a fresh particle (c, w).

    c is mean-zero with bounded support: uniform on [-b, b] or the two-point
    law on {-b, +b}.  w has i.i.d. components: standard normal or uniform on
    [-b_w, b_w].  The two-point c law exists for exact-support unit tests;
    it carries no density, so convergence studies should use uniform x normal.
    """

    c_law: str = "uniform"
    b: float = 1.0
    w_law: str = "normal"
    b_w: float = 1.0

    def __post_init__(self):
        if self.c_law not in C_LAWS:
            raise UnsupportedLaw(f"c_law {self.c_law!r} not in {C_LAWS}")
        if self.w_law not in W_LAWS:
            raise UnsupportedLaw(f"w_law {self.w_law!r} not in {W_LAWS}")
        if self.b <= 0 or self.b_w <= 0:
            raise UnsupportedLaw("law scale parameters must be positive")

    def c_second_moment(self) -> float:
        """E[c^2]; exact for both supported laws."""
        return self.b ** 2 / 3.0 if self.c_law == "uniform" else self.b ** 2

    def draw_c(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.c_law == "uniform":
            return rng.uniform(-self.b, self.b, size)
        return np.where(rng.random(size) < 0.5, -self.b, self.b)

    def draw_w(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.w_law == "normal":
            return rng.standard_normal(size)
        return rng.uniform(-self.b_w, self.b_w, size)


@dataclass
class NetworkParams:
    """Particle system: c (N,) or (N, J) output weights, w (N, d) hidden weights."""

    c: np.ndarray
    w: np.ndarray
    activation: str = "tanh"

    @property
    def n_units(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    @property
    def horizon(self) -> int | None:
        return self.c.shape[1] if self.c.ndim == 2 else None

    def copy(self) -> "NetworkParams":
        return NetworkParams(c=self.c.copy(), w=self.w.copy(), activation=self.activation)


def init_params(law: InitLaw, n_units: int, dim: int, rng_seed: int,
                horizon: int | None = None, activation: str = "tanh") -> NetworkParams:
    """Draw a fresh particle system from the init law.

    Each unit consumes its own spawned seed stream (c first, then w), so unit
    i's parameters do not depend on N: widening a network with the same seed
    extends it without disturbing existing units.
    """
    if n_units < 1:
        raise ValueError("n_units must be >= 1")
    activation_id(activation)  # validate the name early
    c_shape = (n_units,) if horizon is None else (n_units, horizon)
    c = np.empty(c_shape)
    w = np.empty((n_units, dim))
    for i, child in enumerate(np.random.SeedSequence(rng_seed).spawn(n_units)):
        rng = np.random.default_rng(child)
        draw = law.draw_c(rng, 1 if horizon is None else horizon)
        c[i] = draw[0] if horizon is None else draw
        w[i] = law.draw_w(rng, dim)
    return NetworkParams(c=c, w=w, activation=activation)


def forward(params: NetworkParams, zeta: np.ndarray, j: int | None = None) -> float:
    """Network output (1/sqrt(N)) * sum_i c_i sigma(w_i . zeta).

    For finite-horizon params, j selects the time slice of output weights.
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.shape != (params.dim,):
        raise DimensionMismatch(f"zeta has shape {zeta.shape}, expected ({params.dim},)")
    c = _slice_c(params, j)
    s, _, _ = activation(params.activation, params.w @ zeta)
    return float(c @ s / np.sqrt(params.n_units))


def forward_table(params: NetworkParams, zetas: np.ndarray, j: int | None = None) -> np.ndarray:
    """Vector of outputs over a batch of inputs (rows of zetas)."""
    zetas = np.asarray(zetas, dtype=np.float64)
    if zetas.ndim != 2 or zetas.shape[1] != params.dim:
        raise DimensionMismatch(f"zetas has shape {zetas.shape}, expected (*, {params.dim})")
    kern = get_kernels()
    c = _slice_c(params, j)
    return kern.forward_table(np.ascontiguousarray(c), params.w, np.ascontiguousarray(zetas),
                              activation_id(params.activation))


def param_gradient(params: NetworkParams, zeta: np.ndarray, j: int | None = None):
    """Per-unit gradients of the output: (dQ/dc_i, dQ/dw_i).

    dQ/dc_i = sigma(w_i.zeta)/sqrt(N); dQ/dw_i = c_i sigma'(w_i.zeta) zeta / sqrt(N).
    """
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.shape != (params.dim,):
        raise DimensionMismatch(f"zeta has shape {zeta.shape}, expected ({params.dim},)")
    c = _slice_c(params, j)
    s, d1, _ = activation(params.activation, params.w @ zeta)
    root_n = np.sqrt(params.n_units)
    grad_c = s / root_n
    grad_w = (c * d1)[:, None] * zeta[None, :] / root_n
    return grad_c, grad_w


def measure_moments(params: NetworkParams, j: int = 0) -> dict[str, float]:
    """Empirical-measure moments over units for the test functions
    {1, c, c^2, w_1, ||w||^2, c*w_1}.

    For finite-horizon params the c coordinate is the slice-j output weight
    (each slice carries its own empirical measure; they share w).
    """
    c = _slice_c(params, j if params.horizon is not None else None)
    w1 = params.w[:, 0]
    return {
        "1": 1.0,
        "c": float(np.mean(c)),
        "c2": float(np.mean(c * c)),
        "w1": float(np.mean(w1)),
        "w_norm2": float(np.mean(np.sum(params.w * params.w, axis=1))),
        "c_w1": float(np.mean(c * w1)),
    }


def _slice_c(params: NetworkParams, j: int | None) -> np.ndarray:
    if params.horizon is None:
        if j is not None:
            raise DimensionMismatch("time slice given for infinite-horizon params")
        return params.c
    if j is None:
        raise DimensionMismatch("finite-horizon params need a time slice j")
    if not (0 <= j < params.horizon):
        raise DimensionMismatch(f"slice {j} outside horizon {params.horizon}")
    return params.c[:, j]
