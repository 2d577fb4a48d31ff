"""Discrete stochastic training loops with learning rate alpha/N.

Three modes share one recording scheme: infinite-horizon Q-learning on a
sampled chain, finite-horizon Q-learning on fresh episodes, and SGD
regression on a fixed dataset.  Scaled time is t = k/N; a run of length T
takes floor(N*T) steps and snapshots the full output table plus empirical
measure moments every `stride` steps and at the final step.

The single-step functions are the unit-testable contract; `train` drives the
same arithmetic through the backend kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import json

import numpy as np

from .activations import activation, activation_id
from .backend import get_kernels
from .errors import DimensionMismatch, EpisodeLengthMismatch
from .mdp import ValidatedMdp
from .network import MOMENT_KEYS, InitLaw, NetworkParams, init_params

DIRECTION_TOL = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    alpha: float
    t_end: float
    rng_seed: int
    mode: str  # infinite | finite | regression
    snapshot_stride: int | None = None
    burn_in: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.mode not in ("infinite", "finite", "regression"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")


@dataclass
class TrainRecord:
    """Time-gridded trajectory of one training run."""

    times: np.ndarray        # (S,) scaled times k/N
    snapshots: np.ndarray    # (S, M) or (S, J+1, M)
    moments: np.ndarray      # (S, len(MOMENT_KEYS))
    final_params: NetworkParams
    n_units: int
    config: TrainConfig
    backend: str

    def moment_series(self, key: str) -> np.ndarray:
        return self.moments[:, MOMENT_KEYS.index(key)]


@dataclass(frozen=True)
class RegressionDataset:
    """Fixed dataset of M distinct inputs; the sampling law is the uniform
    mixture of its atoms."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.xs, dtype=np.float64))
        ys = np.asarray(self.ys, dtype=np.float64)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if xs.shape[0] < 1 or ys.shape != (xs.shape[0],):
            raise ValueError("dataset needs M >= 1 inputs with matching targets")
        norms = np.linalg.norm(xs, axis=1)
        dots = np.abs(xs @ xs.T)
        for i in range(xs.shape[0]):
            for j in range(i + 1, xs.shape[0]):
                if dots[i, j] >= norms[i] * norms[j] - DIRECTION_TOL:
                    raise ValueError(f"dataset points {i} and {j} are parallel or nearly so")

    @property
    def size(self) -> int:
        return self.xs.shape[0]

    @property
    def dim(self) -> int:
        return self.xs.shape[1]


def load_regression_dataset(path: str | Path) -> RegressionDataset:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    unknown = set(doc) - {"xs", "ys"}
    if unknown:
        raise ValueError(f"unknown dataset fields: {sorted(unknown)}")
    return RegressionDataset(xs=np.asarray(doc["xs"], dtype=np.float64),
                             ys=np.asarray(doc["ys"], dtype=np.float64))


# ---------------------------------------------------------------------------
# single-step updates (pre-update residual, all units moved simultaneously)

def q_step_infinite(params: NetworkParams, sample, alpha: float, gamma: float,
                    vmdp: ValidatedMdp) -> NetworkParams:
    """One infinite-horizon Q-learning step on sample (x_k, a_k, x_{k+1}, r_k).

    The residual D = r + gamma * max_a' Q(x_{k+1}, a') - Q(x_k, a_k) is
    evaluated once from the incoming parameters and reused in both updates.
    """
    x_k, a_k, x_next, r_k = sample
    if params.dim != vmdp.d:
        raise DimensionMismatch(f"params dim {params.dim} != embedding dim {vmdp.d}")
    n = params.n_units
    root_n = np.sqrt(n)
    zeta = vmdp.zetas[vmdp.pair_index(x_k, a_k)]
    sig, sigp, _ = activation(params.activation, params.w @ zeta)
    q_pred = params.c @ sig / root_n
    s_next, _, _ = activation(
        params.activation,
        params.w @ vmdp.zetas[x_next * vmdp.n_actions:(x_next + 1) * vmdp.n_actions].T)
    q_max = np.max(params.c @ s_next / root_n)
    d = r_k + gamma * q_max - q_pred
    coef = alpha * n ** -1.5 * d
    c_new = params.c + coef * sig
    w_new = params.w + (coef * (params.c * sigp))[:, None] * zeta[None, :]
    return NetworkParams(c=c_new, w=w_new, activation=params.activation)


def q_step_finite(params: NetworkParams, episode, alpha: float, gamma: float,
                  vmdp: ValidatedMdp) -> NetworkParams:
    """One finite-horizon step on a full episode (states, actions, rewards).

    Slice-j output weights take the slice-j residual; the shared hidden
    weights take the residual-weighted sum over j = 0..J-1.  Slice J is the
    terminal reward, never parameterized.
    """
    states, acts, rewards = episode
    j_hor = params.horizon
    if j_hor is None:
        raise DimensionMismatch("q_step_finite needs finite-horizon params")
    if len(states) != j_hor + 1 or len(acts) != j_hor:
        raise EpisodeLengthMismatch(
            f"episode with {len(states)} states / {len(acts)} actions does not fit horizon {j_hor}")
    n = params.n_units
    root_n = np.sqrt(n)
    scale = alpha * n ** -1.5
    sig = np.empty((j_hor, n))
    sigp = np.empty((j_hor, n))
    d = np.empty(j_hor)
    for j in range(j_hor):
        pair = vmdp.pair_index(states[j], acts[j])
        sig[j], sigp[j], _ = activation(params.activation, params.w @ vmdp.zetas[pair])
        q_j = params.c[:, j] @ sig[j] / root_n
        z = states[j + 1]
        if j + 1 == j_hor:
            q_next = float(vmdp.spec.terminal_rewards[z])
        else:
            s_next, _, _ = activation(
                params.activation,
                params.w @ vmdp.zetas[z * vmdp.n_actions:(z + 1) * vmdp.n_actions].T)
            q_next = float(np.max(params.c[:, j + 1] @ s_next / root_n))
        d[j] = rewards[j] + gamma * q_next - q_j
    c_new = params.c.copy()
    w_step = np.zeros_like(params.w)
    for j in range(j_hor):
        pair = vmdp.pair_index(states[j], acts[j])
        w_step += (scale * d[j] * (params.c[:, j] * sigp[j]))[:, None] * vmdp.zetas[pair][None, :]
    for j in range(j_hor):
        c_new[:, j] += scale * d[j] * sig[j]
    return NetworkParams(c=c_new, w=params.w + w_step, activation=params.activation)


def sgd_step_regression(params: NetworkParams, sample, alpha: float) -> NetworkParams:
    """One SGD step on (x_k, y_k) for the mean-squared regression loss."""
    x_k, y_k = sample
    x_k = np.asarray(x_k, dtype=np.float64)
    if x_k.shape != (params.dim,):
        raise DimensionMismatch(f"input has shape {x_k.shape}, expected ({params.dim},)")
    n = params.n_units
    root_n = np.sqrt(n)
    sig, sigp, _ = activation(params.activation, params.w @ x_k)
    g = params.c @ sig / root_n
    coef = alpha * n ** -1.5 * (y_k - g)
    c_new = params.c + coef * sig
    w_new = params.w + (coef * (params.c * sigp))[:, None] * x_k[None, :]
    return NetworkParams(c=c_new, w=w_new, activation=params.activation)


# ---------------------------------------------------------------------------
# full runs

def snapshot_steps(n_steps: int, stride: int) -> np.ndarray:
    """Recorded step indices: multiples of stride below n_steps, plus n_steps."""
    ks = list(range(0, n_steps, stride))
    if ks[-1] != n_steps:
        ks.append(n_steps)
    return np.asarray(ks, dtype=np.int64)


def default_stride(n_units: int) -> int:
    return max(1, n_units // 100)


def train(target, law: InitLaw, n_units: int, config: TrainConfig,
          backend: str | None = None) -> TrainRecord:
    """Run floor(N*T) steps of the mode-appropriate update and record.

    `target` is a ValidatedMdp for the Q-learning modes or a
    RegressionDataset for regression.  All randomness flows from
    config.rng_seed; reruns are bit-identical.
    """
    n_steps = int(np.floor(n_units * config.t_end))
    if n_steps < 1:
        raise ValueError(f"floor(N*T) = {n_steps}; need at least one step")
    stride = config.snapshot_stride or default_stride(n_units)
    snaps = snapshot_steps(n_steps, stride)
    kern = get_kernels(backend)
    act_id = activation_id(config.activation)
    rng = np.random.default_rng(config.rng_seed)

    if config.mode == "regression":
        dataset: RegressionDataset = target
        params = init_params(law, n_units, dataset.dim, config.rng_seed,
                             activation=config.activation)
        u = rng.random(n_steps)
        idx = np.minimum((u * dataset.size).astype(np.int64), dataset.size - 1)
        tables, moments = kern.train_regression(
            params.c, params.w, np.ascontiguousarray(dataset.xs), dataset.ys,
            config.alpha, idx, snaps, act_id)
    elif config.mode == "infinite":
        vmdp: ValidatedMdp = target
        if vmdp.spec.is_finite_horizon:
            raise ValueError("infinite mode needs an infinite-horizon spec")
        params = init_params(law, n_units, vmdp.d, config.rng_seed,
                             activation=config.activation)
        total = config.burn_in + n_steps
        u0 = rng.random()
        u_act = rng.random(total)
        u_trn = rng.random(total)
        x0 = min(int(u0 * vmdp.n_states), vmdp.n_states - 1)
        acts = np.minimum((u_act * vmdp.n_actions).astype(np.int64), vmdp.n_actions - 1)
        if config.burn_in > 0:
            _, _, xnext = kern.chain_path(vmdp.p_cum, vmdp.n_actions, x0,
                                          acts[:config.burn_in], u_trn[:config.burn_in])
            x0 = int(xnext[-1])
        tables, moments = kern.train_infinite(
            params.c, params.w, vmdp.zetas, vmdp.r_flat, vmdp.p_cum,
            vmdp.n_actions, vmdp.gamma, config.alpha,
            x0, acts[config.burn_in:], u_trn[config.burn_in:], snaps, act_id)
    elif config.mode == "finite":
        vmdp = target
        if not vmdp.spec.is_finite_horizon:
            raise ValueError("finite mode needs a finite-horizon spec")
        j_hor = int(vmdp.spec.horizon)
        params = init_params(law, n_units, vmdp.d, config.rng_seed,
                             horizon=j_hor, activation=config.activation)
        u = rng.random((n_steps, 1 + 2 * j_hor))
        pi0_cum = np.cumsum(vmdp.spec.initial_dist)
        x0s = np.searchsorted(pi0_cum, u[:, 0], side="right").astype(np.int64)
        acts = np.minimum((u[:, 1::2] * vmdp.n_actions).astype(np.int64), vmdp.n_actions - 1)
        u_trn = np.ascontiguousarray(u[:, 2::2])
        tables, moments = kern.train_finite(
            params.c, params.w, vmdp.zetas, vmdp.r_flat, vmdp.spec.terminal_rewards,
            vmdp.p_cum, vmdp.n_actions, vmdp.gamma, config.alpha,
            x0s, np.ascontiguousarray(acts), u_trn, snaps, act_id)
    else:  # pragma: no cover - guarded by TrainConfig
        raise ValueError(config.mode)

    return TrainRecord(
        times=snaps.astype(np.float64) / n_units,
        snapshots=tables,
        moments=moments,
        final_params=params,
        n_units=n_units,
        config=config,
        backend=kern.BACKEND_NAME,
    )


def training_loss(record: TrainRecord, dataset: RegressionDataset) -> float:
    """Mean squared error of the final snapshot against the dataset targets."""
    return float(np.mean((record.snapshots[-1] - dataset.ys) ** 2))
