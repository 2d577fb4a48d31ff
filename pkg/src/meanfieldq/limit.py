"""Limit-side objects: kernel matrix A, limit ODEs, Lyapunov diagnostics.

The kernel matrix couples state-action embeddings through the init law:

    A[z, z'] = alpha * ( E[sigma(w.z') sigma(w.z)]
                         + E[c^2 sigma'(w.z') sigma'(w.z)] * (z . z') )

with (c, w) drawn from the init law.  In regression mode the whole matrix is
divided by the dataset size.  A is estimated by chunked Monte Carlo (the
default) or by dense quadrature where the law allows it; positive
definiteness is verified numerically, never assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import activation_id
from .backend import get_kernels
from .errors import (
    AsymmetricInput,
    DimensionMismatch,
    NonFiniteState,
    NotPositiveDefinite,
    UnsupportedLaw,
)
from .mdp import StateActionDist, ValidatedMdp, ValueTable
from .network import InitLaw

PD_RATIO = 1e-10
SYMMETRY_TOL = 1e-12
DEFAULT_CHUNK = 1 << 16


@dataclass
class KernelTensor:
    """Symmetric M x M coupling matrix with estimation metadata."""

    alpha: float
    entries: np.ndarray
    method: str                     # montecarlo | quadrature | identity
    samples: int = 0
    seed: int | None = None
    stderr: np.ndarray | None = None
    eig_min: float | None = None
    eig_max: float | None = None

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass
class OdeSolution:
    """Uniform-grid trajectory of a limit ODE."""

    times: np.ndarray
    values: np.ndarray              # (S, M) or (S, J+1, M)
    step_size: float
    mode: str

    def final(self) -> np.ndarray:
        return self.values[-1]


@dataclass
class LyapunovTrace:
    times: np.ndarray
    y_values: np.ndarray

    def is_nonincreasing(self, slack: float = 1e-10) -> bool:
        return bool(np.all(np.diff(self.y_values) <= slack))


# ---------------------------------------------------------------------------
# kernel matrix estimation

def _mc_sums(law: InitLaw, zetas: np.ndarray, samples: int, rng_seed: int,
             act_id: int, chunk_size: int, backend: str | None = None):
    """Chunked Monte Carlo accumulation; bit-reproducible for a given
    (seed, samples, chunk_size) because chunk seeds are derived from the
    chunk index and partial sums combine in chunk order."""
    kern = get_kernels(backend)
    m = zetas.shape[0]
    d = zetas.shape[1]
    totals = [np.zeros((m, m)) for _ in range(6)]
    done = 0
    chunk_index = 0
    while done < samples:
        n_c = min(chunk_size, samples - done)
        rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), chunk_index]))
        c = np.asarray(law.draw_c(rng, n_c), dtype=np.float64)
        w = np.asarray(law.draw_w(rng, (n_c, d)), dtype=np.float64)
        parts = kern.a_moment_sums(c, w, np.ascontiguousarray(zetas), act_id)
        for tot, part in zip(totals, parts):
            tot += part
        done += n_c
        chunk_index += 1
    return totals


def estimate_A(law: InitLaw, embeddings: np.ndarray, alpha: float, samples: int,
               rng_seed: int, activation: str = "tanh", regression_mode: bool = False,
               method: str = "montecarlo", chunk_size: int = DEFAULT_CHUNK,
               quad_nodes: int = 201, backend: str | None = None) -> KernelTensor:
    """Estimate the kernel matrix over the given embedding rows.

    montecarlo: average of alpha * [sigma sigma + c^2 sigma' sigma' (z.z')]
    over i.i.d. (c, w) draws, symmetrized with its transpose; per-entry
    standard errors are recorded.  quadrature: deterministic reference for
    laws the dense grid supports (normal w via the bivariate projection of
    (w.z, w.z'), uniform w in dimension <= 2).
    """
    zetas = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    m = zetas.shape[0]
    act_id = activation_id(activation)
    gram = zetas @ zetas.T
    denom = float(m) if regression_mode else 1.0

    if method == "quadrature":
        g1, g2 = _quadrature_sigma_moments(law, zetas, activation, quad_nodes)
        entries = alpha * (g1 + law.c_second_moment() * g2 * gram) / denom
        entries = 0.5 * (entries + entries.T)
        return KernelTensor(alpha=alpha, entries=entries, method="quadrature",
                            samples=quad_nodes, seed=None, stderr=None)
    if method != "montecarlo":
        raise ValueError(f"unknown estimation method {method!r}")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    s1, s2, _, q1, q2, q12 = _mc_sums(law, zetas, samples, rng_seed, act_id,
                                      chunk_size, backend)
    mean = (s1 + s2 * gram) / samples
    entries = alpha * mean / denom
    entries = 0.5 * (entries + entries.T)
    sumsq = (q1 + 2.0 * q12 * gram + q2 * gram * gram) / samples
    var = np.maximum(sumsq - mean * mean, 0.0)
    stderr = alpha * np.sqrt(var / samples) / denom
    stderr = 0.5 * (stderr + stderr.T)
    return KernelTensor(alpha=alpha, entries=entries, method="montecarlo",
                        samples=samples, seed=rng_seed, stderr=stderr)


def estimate_initial_cov(law: InitLaw, embeddings: np.ndarray, samples: int,
                         rng_seed: int, activation: str = "tanh",
                         method: str = "montecarlo", chunk_size: int = DEFAULT_CHUNK,
                         quad_nodes: int = 201) -> np.ndarray:
    """Covariance E[c^2 sigma(w.z) sigma(w.z')] of the width-limit initial
    output table (the mean-zero Gaussian the trained network starts from)."""
    zetas = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if method == "quadrature":
        g1, _ = _quadrature_sigma_moments(law, zetas, activation, quad_nodes)
        return law.c_second_moment() * g1
    act_id = activation_id(activation)
    _, _, t1, _, _, _ = _mc_sums(law, zetas, samples, rng_seed, act_id, chunk_size)
    cov = t1 / samples
    return 0.5 * (cov + cov.T)


def _hermegauss(n: int):
    """Gauss-Hermite nodes/weights for the standard normal weight.

    numpy's hermegauss overflows past a few hundred nodes, so large rules
    come from the Golub-Welsch eigendecomposition of the Jacobi matrix."""
    if n <= 300:
        x, w = np.polynomial.hermite_e.hermegauss(n)
        return x, w / np.sqrt(2.0 * np.pi)
    off = np.sqrt(np.arange(1.0, n))
    jac = np.diag(off, 1) + np.diag(off, -1)
    vals, vecs = np.linalg.eigh(jac)
    return vals, vecs[0] ** 2


def _quadrature_sigma_moments(law: InitLaw, zetas: np.ndarray, activation: str,
                              nodes: int):
    """Dense-grid E[sigma sigma^T] and E[sigma' sigma'^T] over the w law."""
    from .activations import activation as act_fn

    m, d = zetas.shape
    g1 = np.empty((m, m))
    g2 = np.empty((m, m))
    if law.w_law == "normal":
        x, wts = _hermegauss(nodes)
        for i in range(m):
            for j in range(i, m):
                su = np.linalg.norm(zetas[i])
                sv = np.linalg.norm(zetas[j])
                cov = float(zetas[i] @ zetas[j])
                rho = cov / (su * sv)
                if abs(rho) >= 1.0 - 1e-12:
                    sign = 1.0 if rho >= 0 else -1.0
                    u = su * x
                    v = sign * sv * x
                    s_u, d_u, _ = act_fn(activation, u)
                    s_v, d_v, _ = act_fn(activation, v)
                    g1[i, j] = g1[j, i] = float(wts @ (s_u * s_v))
                    g2[i, j] = g2[j, i] = float(wts @ (d_u * d_v))
                else:
                    root = np.sqrt(1.0 - rho * rho)
                    u = su * x[:, None]
                    v = sv * (rho * x[:, None] + root * x[None, :])
                    s_u, d_u, _ = act_fn(activation, u * np.ones_like(v))
                    s_v, d_v, _ = act_fn(activation, v)
                    w2 = wts[:, None] * wts[None, :]
                    g1[i, j] = g1[j, i] = float(np.sum(w2 * s_u * s_v))
                    g2[i, j] = g2[j, i] = float(np.sum(w2 * d_u * d_v))
        return g1, g2
    if law.w_law == "uniform":
        if d > 2:
            raise UnsupportedLaw("quadrature for uniform w is only available for dim <= 2")
        x, wts = np.polynomial.legendre.leggauss(nodes)
        x = x * law.b_w
        wts = wts / 2.0  # normalize the uniform density over [-b_w, b_w]
        if d == 1:
            grid = x[:, None]
            gw = wts
        else:
            grid = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
            gw = (wts[:, None] * wts[None, :]).reshape(-1)
        z = grid @ zetas.T  # (nodes, M)
        s, dv, _ = act_fn(activation, z)
        g1 = (s * gw[:, None]).T @ s
        g2 = (dv * gw[:, None]).T @ dv
        return g1, g2
    raise UnsupportedLaw(f"no quadrature rule for w law {law.w_law!r}")


def identity_kernel(m: int, alpha: float = 1.0) -> KernelTensor:
    """Debug kernel: A = alpha * I reproduces classical diagonal dynamics."""
    return KernelTensor(alpha=alpha, entries=alpha * np.eye(m), method="identity")


def pd_check(kt: KernelTensor):
    """Eigenvalue extremes of the symmetric kernel; fills kt.eig_min/eig_max.

    is_pd holds iff eig_min > 1e-10 * eig_max.  Raises AsymmetricInput when
    the entries are not symmetric to 1e-12.
    """
    a = kt.entries
    if a.shape[0] != a.shape[1]:
        raise AsymmetricInput(f"kernel matrix must be square, got {a.shape}")
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOL:
        raise AsymmetricInput("kernel entries are not symmetric to 1e-12")
    eigs = np.linalg.eigvalsh(a)
    kt.eig_min = float(eigs[0])
    kt.eig_max = float(eigs[-1])
    is_pd = kt.eig_min > PD_RATIO * kt.eig_max
    return kt.eig_min, kt.eig_max, bool(is_pd)


# ---------------------------------------------------------------------------
# limit ODE right-hand sides

def _table_values(h) -> np.ndarray:
    return h.values if isinstance(h, ValueTable) else np.asarray(h, dtype=np.float64)


def ode_rhs_infinite(h, kt: KernelTensor, pi: StateActionDist, vmdp: ValidatedMdp,
                     gamma: float | None = None) -> ValueTable:
    """dh(z) = sum_z' pi(z') A[z, z'] (r(z') + gamma U(h)(z') - h(z'))."""
    hv = _table_values(h)
    if hv.shape != (vmdp.m,):
        raise DimensionMismatch(f"table shape {hv.shape} != ({vmdp.m},)")
    if kt.size != vmdp.m:
        raise DimensionMismatch("kernel size does not match the state-action table")
    g = vmdp.gamma if gamma is None else gamma
    kern = get_kernels()
    b_mat = kt.entries * pi.probs[None, :]
    out = kern.rhs_infinite(hv, b_mat, vmdp.r_flat, vmdp.p_flat, g, vmdp.n_actions)
    return ValueTable(values=out, kind="rhs")


def ode_rhs_finite(h, kt: KernelTensor, pi: StateActionDist, vmdp: ValidatedMdp,
                   gamma: float | None = None) -> ValueTable:
    """Per-slice right side over the full (J+1, M) table; slice J is pinned
    to the terminal rewards and has zero derivative."""
    hv = _table_values(h)
    j_hor = int(vmdp.spec.horizon)
    if hv.shape != (j_hor + 1, vmdp.m):
        raise DimensionMismatch(f"table shape {hv.shape} != {(j_hor + 1, vmdp.m)}")
    if pi.per_time is None:
        raise DimensionMismatch("finite-horizon RHS needs per-time marginals")
    g = vmdp.gamma if gamma is None else gamma
    kern = get_kernels()
    b_mats = kt.entries[None, :, :] * pi.per_time[:, None, :]
    out = kern.rhs_finite(hv, np.ascontiguousarray(b_mats), vmdp.r_flat,
                          vmdp.p_flat, g, vmdp.n_actions)
    return ValueTable(values=out, kind="rhs")


def ode_rhs_regression(h, kt: KernelTensor, y_hat: np.ndarray) -> np.ndarray:
    """dh = A (y_hat - h)."""
    hv = _table_values(h)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if hv.shape != y_hat.shape or kt.size != hv.shape[0]:
        raise DimensionMismatch("regression RHS needs matching h, y_hat and kernel sizes")
    kern = get_kernels()
    return kern.rhs_regression(hv, kt.entries, y_hat)


# ---------------------------------------------------------------------------
# integration

def integrate(rhs, h0: np.ndarray, t_end: float, dt: float, mode: str = "generic") -> OdeSolution:
    """Classical fixed-step RK4 on the uniform grid; every point is stored.

    Raises NonFiniteState as soon as the state leaves the finite range,
    which usually signals a step size too large for the spectrum.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    y = np.asarray(h0, dtype=np.float64).copy()
    shape = y.shape
    n_steps = int(round(t_end / dt))
    values = np.empty((n_steps + 1,) + shape)
    values[0] = y
    for k in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"state became non-finite at t = {(k + 1) * dt:g}; reduce dt")
        values[k + 1] = y
    return OdeSolution(times=np.arange(n_steps + 1) * dt, values=values,
                       step_size=dt, mode=mode)


def solve_limit_infinite(vmdp: ValidatedMdp, kt: KernelTensor, pi: StateActionDist,
                         h0: np.ndarray, t_end: float, dt: float,
                         gamma: float | None = None) -> OdeSolution:
    g = vmdp.gamma if gamma is None else gamma
    kern = get_kernels()
    b_mat = kt.entries * pi.probs[None, :]

    def rhs(y):
        return kern.rhs_infinite(y, b_mat, vmdp.r_flat, vmdp.p_flat, g, vmdp.n_actions)

    return integrate(rhs, h0, t_end, dt, mode="infinite")


def solve_limit_finite(vmdp: ValidatedMdp, kt: KernelTensor, pi: StateActionDist,
                       h0: np.ndarray, t_end: float, dt: float,
                       gamma: float | None = None) -> OdeSolution:
    """h0 must be the full (J+1, M) table with slice J equal to the terminal
    rewards; that slice stays constant along the flow."""
    g = vmdp.gamma if gamma is None else gamma
    kern = get_kernels()
    b_mats = np.ascontiguousarray(kt.entries[None, :, :] * pi.per_time[:, None, :])

    def rhs(y):
        return kern.rhs_finite(y, b_mats, vmdp.r_flat, vmdp.p_flat, g, vmdp.n_actions)

    return integrate(rhs, h0, t_end, dt, mode="finite")


def solve_limit_regression(kt: KernelTensor, y_hat: np.ndarray, h0: np.ndarray,
                           t_end: float, dt: float) -> OdeSolution:
    kern = get_kernels()
    y_hat = np.asarray(y_hat, dtype=np.float64)

    def rhs(y):
        return kern.rhs_regression(y, kt.entries, y_hat)

    return integrate(rhs, h0, t_end, dt, mode="regression")


# ---------------------------------------------------------------------------
# diagnostics

def bellman_residual(h, vmdp: ValidatedMdp, gamma: float | None = None) -> ValueTable:
    """r + gamma U(h) - h (per slice for finite horizon; slice J checks the
    terminal pin)."""
    hv = _table_values(h)
    g = vmdp.gamma if gamma is None else gamma
    if hv.ndim == 1:
        from .mdp import max_over_actions

        u = vmdp.p_flat @ max_over_actions(hv, vmdp.n_states, vmdp.n_actions)
        return ValueTable(values=vmdp.r_flat + g * u - hv, kind="residual")
    j_hor = int(vmdp.spec.horizon)
    from .mdp import max_over_actions

    out = np.empty_like(hv)
    for j in range(j_hor):
        u = vmdp.p_flat @ max_over_actions(hv[j + 1], vmdp.n_states, vmdp.n_actions)
        out[j] = vmdp.r_flat[j] + g * u - hv[j]
    out[j_hor] = np.repeat(vmdp.spec.terminal_rewards, vmdp.n_actions) - hv[j_hor]
    return ValueTable(values=out, kind="residual")


def lyapunov_trace(sol: OdeSolution, v_table: ValueTable, kt: KernelTensor) -> LyapunovTrace:
    """Y_t = (1/2) phi_t . A^{-1} phi_t with phi_t = h_t - V.

    Computed through the symmetric eigendecomposition of A (a factorization
    solve); the inverse is never formed.  For finite-horizon solutions the
    quadratic form is summed over the parameterized slices 0..J-1.
    """
    if kt.eig_min is None:
        pd_check(kt)
    if not (kt.eig_min > PD_RATIO * kt.eig_max):
        raise NotPositiveDefinite(
            f"kernel eigenvalues [{kt.eig_min:.3e}, {kt.eig_max:.3e}] are not positive definite")
    eigs, q = np.linalg.eigh(kt.entries)
    phi = sol.values - v_table.values[None, ...]
    if phi.ndim == 3:
        phi = phi[:, :-1, :]  # slice J is pinned; only 0..J-1 carry error
        proj = np.einsum("mk,sjm->sjk", q, phi)
        y = 0.5 * np.sum(proj * proj / eigs[None, None, :], axis=(1, 2))
    else:
        proj = phi @ q
        y = 0.5 * np.sum(proj * proj / eigs[None, :], axis=1)
    return LyapunovTrace(times=sol.times.copy(), y_values=y)


def draw_gaussian_table(cov: np.ndarray, rng_seed: int, n_slices: int | None = None) -> np.ndarray:
    """Sample the limit initial condition: mean-zero Gaussian with the given
    covariance, independently per time slice when n_slices is set."""
    eigs, q = np.linalg.eigh(cov)
    root = q * np.sqrt(np.maximum(eigs, 0.0))[None, :]
    rng = np.random.default_rng(rng_seed)
    if n_slices is None:
        return root @ rng.standard_normal(cov.shape[0])
    return rng.standard_normal((n_slices, cov.shape[0])) @ root.T
