"""Finite Markov decision problems: model, validation, exact solvers, samplers.

States and actions are user-supplied embedding vectors; the pair (x, a) is
always handled as the concatenated vector zeta in R^{d_x + d_a}.  Tables over
state-action pairs are flat float64 arrays indexed by ``x * K + a``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backend import get_kernels
from .errors import (
    ConvergenceFailure,
    DiscountNotContractive,
    IterationCapExceeded,
    NonPositiveInitialDist,
    ParallelEmbeddings,
    ReducibleChain,
    RowNotStochastic,
    ZeroMassState,
)

ROW_SUM_TOL = 1e-12
DIRECTION_TOL = 1e-9
VALUE_ITER_CAP = 10 ** 6


@dataclass(frozen=True)
class MdpSpec:
    """Raw model data before validation.

    rewards is (n_states, n_actions) for infinite horizon, or
    (J, n_states, n_actions) together with terminal_rewards (n_states,)
    when horizon J is set.  gamma lies in (0, 1]; initial_dist is only
    meaningful for finite-horizon specs.
    """

    states: np.ndarray
    actions: np.ndarray
    transition: np.ndarray
    rewards: np.ndarray
    gamma: float
    horizon: int | None = None
    terminal_rewards: np.ndarray | None = None
    initial_dist: np.ndarray | None = None

    @property
    def is_finite_horizon(self) -> bool:
        return self.horizon is not None


@dataclass(frozen=True)
class StateActionDist:
    """Distribution over state-action pairs, optionally one per time slice."""

    probs: np.ndarray
    per_time: np.ndarray | None = None  # (J, M) when present


@dataclass
class ValueTable:
    """A table (x, a) -> value, or (j, x, a) -> value for finite horizon.

    `kind` records what the numbers are (e.g. "V", "h_t", "h_t_N").
    """

    values: np.ndarray
    kind: str = "V"

    @property
    def is_finite_horizon(self) -> bool:
        return self.values.ndim == 2


@dataclass(frozen=True)
class ValidatedMdp:
    """An MdpSpec that passed validation, plus derived flat quantities."""

    spec: MdpSpec
    n_states: int
    n_actions: int
    d_x: int
    d_a: int
    d: int
    m: int
    zetas: np.ndarray        # (M, d) concatenated embeddings, index x*K + a
    p_flat: np.ndarray       # (M, n_states) transition rows per pair
    p_cum: np.ndarray        # row-wise cumulative sums of p_flat
    p_uniform: np.ndarray    # (n, n) uniform-policy state kernel
    r_flat: np.ndarray       # (M,) or (J, M)

    @property
    def gamma(self) -> float:
        return self.spec.gamma

    @property
    def horizon(self) -> int | None:
        return self.spec.horizon

    def pair_index(self, x: int, a: int) -> int:
        return x * self.n_actions + a

    def pair_labels(self) -> list[str]:
        return [f"x{x}_a{a}" for x in range(self.n_states) for a in range(self.n_actions)]


# ---------------------------------------------------------------------------
# spec file loading

_COMMON_FIELDS = {"states", "actions", "transition", "rewards", "gamma",
                  "horizon", "terminal_rewards", "initial_dist"}


def mdp_spec_from_dict(doc: dict) -> MdpSpec:
    """Build an MdpSpec from a parsed JSON document; unknown fields are errors."""
    unknown = set(doc) - _COMMON_FIELDS
    if unknown:
        raise ValueError(f"unknown MDP spec fields: {sorted(unknown)}")
    for required in ("states", "actions", "transition", "rewards", "gamma"):
        if required not in doc:
            raise ValueError(f"MDP spec missing required field {required!r}")
    horizon = doc.get("horizon")
    spec = MdpSpec(
        states=np.asarray(doc["states"], dtype=np.float64),
        actions=np.asarray(doc["actions"], dtype=np.float64),
        transition=np.asarray(doc["transition"], dtype=np.float64),
        rewards=np.asarray(doc["rewards"], dtype=np.float64),
        gamma=float(doc["gamma"]),
        horizon=None if horizon is None else int(horizon),
        terminal_rewards=(np.asarray(doc["terminal_rewards"], dtype=np.float64)
                          if doc.get("terminal_rewards") is not None else None),
        initial_dist=(np.asarray(doc["initial_dist"], dtype=np.float64)
                      if doc.get("initial_dist") is not None else None),
    )
    return spec


def load_mdp_spec(path: str | Path) -> MdpSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return mdp_spec_from_dict(json.load(fh))


def mdp_spec_to_dict(spec: MdpSpec) -> dict:
    doc = {
        "states": spec.states.tolist(),
        "actions": spec.actions.tolist(),
        "transition": spec.transition.tolist(),
        "rewards": spec.rewards.tolist(),
        "gamma": spec.gamma,
    }
    if spec.horizon is not None:
        doc["horizon"] = spec.horizon
    if spec.terminal_rewards is not None:
        doc["terminal_rewards"] = spec.terminal_rewards.tolist()
    if spec.initial_dist is not None:
        doc["initial_dist"] = spec.initial_dist.tolist()
    return doc


# ---------------------------------------------------------------------------
# validation

def _reachable_closure(adj: np.ndarray) -> np.ndarray:
    """Boolean transitive closure by repeated squaring."""
    reach = adj | np.eye(adj.shape[0], dtype=bool)
    for _ in range(max(1, int(np.ceil(np.log2(adj.shape[0] + 1))))):
        reach = reach | (reach @ reach)
    return reach


def validate_mdp(spec: MdpSpec) -> ValidatedMdp:
    """Check every model invariant and return the spec with derived data.

    Raises RowNotStochastic, ParallelEmbeddings, ReducibleChain or
    NonPositiveInitialDist; the error message names the offending entry.
    """
    states = np.atleast_2d(np.asarray(spec.states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(spec.actions, dtype=np.float64))
    n, d_x = states.shape
    k, d_a = actions.shape
    d = d_x + d_a
    m = n * k

    trans = np.asarray(spec.transition, dtype=np.float64)
    if trans.shape != (n, k, n):
        raise RowNotStochastic(
            f"transition shape {trans.shape} does not match (n_states, n_actions, n_states) = {(n, k, n)}")
    if np.any(trans < 0.0):
        bad = np.argwhere(trans < 0.0)[0]
        raise RowNotStochastic(f"negative transition probability at (x={bad[0]}, a={bad[1]}, z={bad[2]})")
    row_sums = trans.sum(axis=2)
    off = np.abs(row_sums - 1.0)
    if np.any(off > ROW_SUM_TOL):
        x, a = np.unravel_index(int(np.argmax(off)), off.shape)
        raise RowNotStochastic(f"transition row (x={x}, a={a}) sums to {row_sums[x, a]!r}")

    if spec.is_finite_horizon:
        j_hor = int(spec.horizon)
        if j_hor < 0:
            raise ValueError("horizon must be nonnegative")
        if spec.rewards.shape != (j_hor, n, k):
            raise ValueError(f"finite-horizon rewards shape {spec.rewards.shape} != {(j_hor, n, k)}")
        if spec.terminal_rewards is None or spec.terminal_rewards.shape != (n,):
            raise ValueError("finite-horizon spec needs terminal_rewards of shape (n_states,)")
        if not np.all(np.isfinite(spec.terminal_rewards)):
            raise ValueError("terminal rewards must be finite")
        if spec.initial_dist is None:
            raise NonPositiveInitialDist("finite-horizon spec requires initial_dist")
        pi0 = np.asarray(spec.initial_dist, dtype=np.float64)
        if pi0.shape != (n,) or np.any(pi0 <= 0.0):
            raise NonPositiveInitialDist("initial_dist must be strictly positive over all states")
        if abs(pi0.sum() - 1.0) > ROW_SUM_TOL:
            raise NonPositiveInitialDist(f"initial_dist sums to {pi0.sum()!r}")
    else:
        if spec.rewards.shape != (n, k):
            raise ValueError(f"rewards shape {spec.rewards.shape} != {(n, k)}")
        if not (0.0 < spec.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {spec.gamma}")
    if not np.all(np.isfinite(spec.rewards)):
        raise ValueError("rewards must be finite")

    # distinct-direction hypothesis on the concatenated embeddings
    zetas = np.empty((m, d))
    for x in range(n):
        for a in range(k):
            zetas[x * k + a, :d_x] = states[x]
            zetas[x * k + a, d_x:] = actions[a]
    norms = np.linalg.norm(zetas, axis=1)
    dots = np.abs(zetas @ zetas.T)
    for i in range(m):
        for j in range(i + 1, m):
            if dots[i, j] >= norms[i] * norms[j] - DIRECTION_TOL:
                raise ParallelEmbeddings(
                    f"embeddings for pairs (x={i // k},a={i % k}) and (x={j // k},a={j % k}) "
                    "are parallel or nearly so")

    # irreducibility of the uniform-policy chain
    p_uniform = trans.mean(axis=1)
    reach = _reachable_closure(p_uniform > 0.0)
    if not reach.all():
        src, dst = np.argwhere(~reach)[0]
        raise ReducibleChain(f"state {dst} is unreachable from state {src} under the uniform policy")

    p_flat = trans.reshape(m, n)
    if spec.is_finite_horizon:
        r_flat = spec.rewards.reshape(int(spec.horizon), m)
    else:
        r_flat = spec.rewards.reshape(m)
    return ValidatedMdp(
        spec=spec, n_states=n, n_actions=k, d_x=d_x, d_a=d_a, d=d, m=m,
        zetas=zetas, p_flat=p_flat, p_cum=np.cumsum(p_flat, axis=1),
        p_uniform=p_uniform, r_flat=np.ascontiguousarray(r_flat),
    )


# ---------------------------------------------------------------------------
# stationary distributions

def stationary_state_distribution(vmdp: ValidatedMdp, residual_tol: float = 1e-12,
                                  max_power_iters: int = 200_000) -> StateActionDist:
    """Stationary law of the uniform-policy chain, spread uniformly over actions.

    Solves pi P = pi by a dense linear solve with the normalization row
    appended, then falls back to power iteration if the residual is not met.
    """
    p = vmdp.p_uniform
    n = vmdp.n_states
    a = p.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        pi = np.full(n, 1.0 / n)
    pi = np.maximum(pi, 0.0)
    s = pi.sum()
    if s > 0:
        pi = pi / s
    iters = 0
    while np.abs(pi @ p - pi).sum() > residual_tol:
        pi = pi @ p
        pi = pi / pi.sum()
        iters += 1
        if iters > max_power_iters:
            raise ConvergenceFailure(
                f"stationary distribution residual {np.abs(pi @ p - pi).sum():.3e} "
                f"above {residual_tol} after {iters} power iterations")
    if np.any(pi <= 0.0):
        raise ConvergenceFailure("stationary distribution has a non-positive entry")
    probs = np.repeat(pi / vmdp.n_actions, vmdp.n_actions)
    return StateActionDist(probs=probs)


def time_marginals(vmdp: ValidatedMdp) -> StateActionDist:
    """Forward-pushed laws pi_j(x, a) for j = 0..J-1 under the uniform policy."""
    if not vmdp.spec.is_finite_horizon:
        raise ValueError("time_marginals needs a finite-horizon spec")
    j_hor = int(vmdp.spec.horizon)
    pi = np.asarray(vmdp.spec.initial_dist, dtype=np.float64)
    per_time = np.empty((j_hor, vmdp.m))
    for j in range(j_hor):
        if np.any(pi <= 0.0):
            raise ZeroMassState(f"state marginal at time {j} has a zero entry")
        per_time[j] = np.repeat(pi / vmdp.n_actions, vmdp.n_actions)
        pi = pi @ vmdp.p_uniform
    return StateActionDist(probs=per_time[0].copy(), per_time=per_time)


# ---------------------------------------------------------------------------
# exact Bellman solvers

def max_over_actions(table: np.ndarray, n_states: int, n_actions: int) -> np.ndarray:
    """max_a table[x*K + a] as a vector over states."""
    return table.reshape(n_states, n_actions).max(axis=1)


def bellman_solve_infinite(vmdp: ValidatedMdp, tol: float = 1e-12) -> ValueTable:
    """Value iteration for the discounted fixed point.

    Stops once the sweep-to-sweep sup-norm change drops below
    tol * (1 - gamma) / gamma, which by the contraction bound guarantees the
    fixed-point residual ||r + gamma*U(V) - V||_inf < tol.
    """
    gamma = vmdp.gamma
    if not (0.0 < gamma < 1.0):
        raise DiscountNotContractive(f"infinite-horizon solve needs gamma in (0, 1), got {gamma}")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    stop = tol * (1.0 - gamma) / gamma
    v = np.zeros(vmdp.m)
    for _ in range(VALUE_ITER_CAP):
        v_next = vmdp.r_flat + gamma * (vmdp.p_flat @ max_over_actions(v, vmdp.n_states, vmdp.n_actions))
        if np.max(np.abs(v_next - v)) < stop:
            return ValueTable(values=v_next, kind="V")
        v = v_next
    raise IterationCapExceeded(f"value iteration did not converge within {VALUE_ITER_CAP} sweeps")


def bellman_solve_finite(vmdp: ValidatedMdp) -> ValueTable:
    """Exact backward recursion; slice J holds the terminal rewards."""
    if not vmdp.spec.is_finite_horizon:
        raise ValueError("bellman_solve_finite needs a finite-horizon spec")
    j_hor = int(vmdp.spec.horizon)
    gamma = vmdp.gamma
    v = np.empty((j_hor + 1, vmdp.m))
    v[j_hor] = np.repeat(vmdp.spec.terminal_rewards, vmdp.n_actions)
    for j in range(j_hor - 1, -1, -1):
        nxt = vmdp.p_flat @ max_over_actions(v[j + 1], vmdp.n_states, vmdp.n_actions)
        v[j] = vmdp.r_flat[j] + gamma * nxt
    return ValueTable(values=v, kind="V")


# ---------------------------------------------------------------------------
# samplers (pure exploration)

def sample_chain(vmdp: ValidatedMdp, rng_seed: int, steps: int, burn_in: int = 0):
    """Simulate the uniform-policy chain for `steps` recorded transitions.

    Returns arrays (x_k, a_k, x_{k+1}, r_k).  x_0 is uniform over states; each
    a_k is uniform over actions.  All randomness comes from one generator
    seeded with rng_seed, consumed in a fixed order, so the trajectory is
    reproducible bit for bit.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if vmdp.spec.is_finite_horizon:
        raise ValueError("sample_chain is for infinite-horizon specs; use sample_episode")
    rng = np.random.default_rng(rng_seed)
    total = burn_in + steps
    u0 = rng.random()
    u_act = rng.random(total)
    u_trn = rng.random(total)
    x0 = min(int(u0 * vmdp.n_states), vmdp.n_states - 1)
    pre_acts = np.minimum((u_act * vmdp.n_actions).astype(np.int64), vmdp.n_actions - 1)
    kern = get_kernels()
    xs, acts, xnext = kern.chain_path(vmdp.p_cum, vmdp.n_actions, x0, pre_acts, u_trn)
    xs, acts, xnext = xs[burn_in:], acts[burn_in:], xnext[burn_in:]
    rewards = vmdp.r_flat[xs * vmdp.n_actions + acts]
    return xs, acts, xnext, rewards


def sample_episode(vmdp: ValidatedMdp, rng_seed: int):
    """One finite-horizon episode: states (J+1,), actions (J,), rewards (J+1,).

    rewards[j] = r(j, x_j, a_j) for j < J and rewards[J] = r(J, x_J).
    """
    if not vmdp.spec.is_finite_horizon:
        raise ValueError("sample_episode needs a finite-horizon spec")
    rng = np.random.default_rng(rng_seed)
    j_hor = int(vmdp.spec.horizon)
    u = rng.random(1 + 2 * j_hor)
    return episode_from_uniforms(vmdp, u)


def episode_from_uniforms(vmdp: ValidatedMdp, u: np.ndarray):
    """Deterministic episode construction from 1 + 2J uniforms.

    Layout: u[0] draws x_0 from initial_dist; then per step j the pair
    (u[1+2j], u[2+2j]) draws the action and the transition.
    """
    j_hor = int(vmdp.spec.horizon)
    pi0_cum = np.cumsum(vmdp.spec.initial_dist)
    states = np.empty(j_hor + 1, dtype=np.int64)
    actions = np.empty(j_hor, dtype=np.int64)
    rewards = np.empty(j_hor + 1)
    states[0] = np.searchsorted(pi0_cum, u[0], side="right")
    for j in range(j_hor):
        a = min(int(u[1 + 2 * j] * vmdp.n_actions), vmdp.n_actions - 1)
        actions[j] = a
        pair = states[j] * vmdp.n_actions + a
        rewards[j] = vmdp.r_flat[j, pair]
        states[j + 1] = np.searchsorted(vmdp.p_cum[pair], u[2 + 2 * j], side="right")
    rewards[j_hor] = vmdp.spec.terminal_rewards[states[j_hor]]
    return states, actions, rewards
