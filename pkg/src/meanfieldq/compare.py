"""Trajectory comparison: trained networks against their coupled limit ODE.

The distance between a run and the limit is the sup over the snapshot grid
of the sup over (slice,) state-action entries of the absolute difference,
with the ODE started from that run's own initial output table and linearly
interpolated onto the snapshot times.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, SpecHashMismatch
from .limit import KernelTensor, OdeSolution, solve_limit_finite, solve_limit_infinite
from .mdp import StateActionDist, ValidatedMdp
from .network import MOMENT_KEYS

INVARIANCE_MOMENTS = ("c", "c2", "w1", "w_norm2")


def interpolate_solution(sol_times: np.ndarray, sol_values: np.ndarray,
                         target_times: np.ndarray) -> np.ndarray:
    """Componentwise linear interpolation of an ODE trajectory onto new times."""
    if target_times[0] < sol_times[0] - 1e-12 or target_times[-1] > sol_times[-1] + 1e-12:
        raise GridMismatch(
            f"snapshot grid [{target_times[0]}, {target_times[-1]}] is not covered by "
            f"the ODE grid [{sol_times[0]}, {sol_times[-1]}]")
    flat = sol_values.reshape(sol_values.shape[0], -1)
    out = np.empty((target_times.shape[0], flat.shape[1]))
    for m in range(flat.shape[1]):
        out[:, m] = np.interp(target_times, sol_times, flat[:, m])
    return out.reshape((target_times.shape[0],) + sol_values.shape[1:])


def coupled_distance(times: np.ndarray, snapshots: np.ndarray, vmdp: ValidatedMdp,
                     kt: KernelTensor, pi: StateActionDist, dt: float,
                     gamma: float | None = None) -> tuple[float, OdeSolution]:
    """Integrate the limit ODE from the run's own h_0 and take the sup distance."""
    t_end = float(np.ceil(times[-1] / dt + 1e-9)) * dt if times[-1] > 0 else dt
    h0 = snapshots[0]
    if snapshots.ndim == 3:
        sol = solve_limit_finite(vmdp, kt, pi, h0, t_end, dt, gamma=gamma)
    else:
        sol = solve_limit_infinite(vmdp, kt, pi, h0, t_end, dt, gamma=gamma)
    ode_on_grid = interpolate_solution(sol.times, sol.values, times)
    return float(np.max(np.abs(snapshots - ode_on_grid))), sol


def invariance_deviations(moments: np.ndarray) -> dict[str, float]:
    """max_t |<f, mu_t> - <f, mu_0>| for the invariance test moments."""
    out = {}
    for key in INVARIANCE_MOMENTS:
        series = moments[:, MOMENT_KEYS.index(key)]
        out[key] = float(np.max(np.abs(series - series[0])))
    return out


def shrink_factors(means_by_n: dict[int, float]) -> list[float]:
    """Ratio of consecutive per-N means, ordered by ascending N."""
    ns = sorted(means_by_n)
    return [means_by_n[a] / means_by_n[b] for a, b in zip(ns, ns[1:])]


@dataclass
class RunReport:
    """Aggregated comparison results plus configured pass/fail verdicts."""

    per_run: list[dict] = field(default_factory=list)
    per_n: dict[int, dict] = field(default_factory=dict)
    distance_factors: list[float] = field(default_factory=list)
    invariance_per_n: dict[str, dict[int, float]] = field(default_factory=dict)
    invariance_factors: dict[str, list[float]] = field(default_factory=dict)
    a_eig: tuple[float, float] | None = None
    bellman_residual_final: float | None = None
    lyapunov_monotone: bool | None = None
    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "per_run": self.per_run,
            "per_n": {str(n): v for n, v in self.per_n.items()},
            "distance_factors": self.distance_factors,
            "invariance_per_n": {f: {str(n): v for n, v in d.items()}
                                 for f, d in self.invariance_per_n.items()},
            "invariance_factors": self.invariance_factors,
            "a_eig": None if self.a_eig is None else list(self.a_eig),
            "bellman_residual_final": self.bellman_residual_final,
            "lyapunov_monotone": self.lyapunov_monotone,
            "checks": self.checks,
            "passed": self.passed,
        }


def check_spec_hashes(metas: list[dict]) -> str:
    hashes = {m["spec_sha1"] for m in metas}
    if len(hashes) != 1:
        raise SpecHashMismatch(f"outputs were produced from different specs: {sorted(hashes)}")
    return hashes.pop()


def build_report(runs: list[dict], vmdp: ValidatedMdp, kt: KernelTensor,
                 pi: StateActionDist, dt: float, gamma: float | None = None,
                 distance_band=None, invariance_band=None) -> RunReport:
    """runs: [{n, seed, times, snapshots, moments, file}] loaded train records."""
    report = RunReport()
    by_n: dict[int, list[float]] = {}
    inv_by_n: dict[str, dict[int, list[float]]] = {f: {} for f in INVARIANCE_MOMENTS}
    for run in runs:
        dist, _ = coupled_distance(run["times"], run["snapshots"], vmdp, kt, pi,
                                   dt, gamma=gamma)
        report.per_run.append({"n": run["n"], "seed": run["seed"],
                               "distance": dist, "file": run.get("file", "")})
        by_n.setdefault(run["n"], []).append(dist)
        for key, dev in invariance_deviations(run["moments"]).items():
            inv_by_n[key].setdefault(run["n"], []).append(dev)

    for n, ds in sorted(by_n.items()):
        arr = np.asarray(ds)
        report.per_n[n] = {
            "mean": float(arr.mean()),
            "stderr": float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0,
            "count": len(arr),
        }
    means = {n: v["mean"] for n, v in report.per_n.items()}
    report.distance_factors = shrink_factors(means)
    for key in INVARIANCE_MOMENTS:
        mean_dev = {n: float(np.mean(v)) for n, v in inv_by_n[key].items()}
        report.invariance_per_n[key] = mean_dev
        report.invariance_factors[key] = shrink_factors(mean_dev)

    ns = sorted(means)
    report.checks["distance_strictly_decreasing"] = all(
        means[a] > means[b] for a, b in zip(ns, ns[1:]))
    if distance_band is not None:
        lo, hi = distance_band
        report.checks["distance_factors_in_band"] = all(
            lo <= f <= hi for f in report.distance_factors)
    if invariance_band is not None:
        lo, hi = invariance_band
        report.checks["invariance_decreasing"] = all(
            all(dev[a] > dev[b] for a, b in zip(ns, ns[1:]))
            for dev in report.invariance_per_n.values())
        report.checks["invariance_factors_in_band"] = all(
            lo <= f <= hi for factors in report.invariance_factors.values() for f in factors)
    return report
