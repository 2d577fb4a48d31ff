"""Command-line orchestration.

Subcommands: bellman, train, limit, compare, amatrix, regress.  Every
subcommand reads one experiment config (--config); --out overrides its
output directory, --seed-offset shifts the training seeds, --workers runs
independent (N, seed) jobs in parallel, --format picks csv or json payloads.

Exit codes: 0 pass, 2 acceptance-gate failure, 1 error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import compare as cmp
from . import io as mio
from .config import load_config, resolve_path
from .errors import MeanFieldQError, NotPositiveDefinite
from .limit import (
    KernelTensor,
    bellman_residual,
    draw_gaussian_table,
    estimate_A,
    estimate_initial_cov,
    identity_kernel,
    lyapunov_trace,
    pd_check,
    solve_limit_finite,
    solve_limit_infinite,
    solve_limit_regression,
)
from .mdp import (
    bellman_solve_finite,
    bellman_solve_infinite,
    load_mdp_spec,
    stationary_state_distribution,
    time_marginals,
    validate_mdp,
)
from .network import InitLaw
from .training import TrainConfig, load_regression_dataset, train


class Experiment:
    """Resolved config plus the loaded spec/dataset and derived objects."""

    def __init__(self, config_path: str | Path, out_override: str | None = None,
                 seed_offset: int = 0):
        self.config_path = Path(config_path)
        self.cfg = load_config(self.config_path)
        self.config_sha = mio.sha256_of_doc(self.cfg.to_dict())
        self.seed_offset = seed_offset
        self.out_dir = Path(out_override) if out_override else Path(self.cfg.output_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        base = self.config_path.parent
        if self.cfg.mode == "regression":
            path = resolve_path(self.cfg.dataset_path, base)
            self.dataset = load_regression_dataset(path)
            self.spec_sha = mio.file_blob_sha1(path)
            self.vmdp = None
            self.pair_labels = [f"p{i}" for i in range(self.dataset.size)]
        else:
            path = resolve_path(self.cfg.mdp_path, base)
            spec = load_mdp_spec(path)
            if self.cfg.gamma is not None:
                spec = dataclasses.replace(spec, gamma=float(self.cfg.gamma))
            self.vmdp = validate_mdp(spec)
            self.dataset = None
            self.spec_sha = mio.file_blob_sha1(path)
            self.pair_labels = self.vmdp.pair_labels()
        self.law = InitLaw(c_law=self.cfg.init.c_law, b=self.cfg.init.b,
                           w_law=self.cfg.init.w_law, b_w=self.cfg.init.b_w)

    @property
    def embeddings(self) -> np.ndarray:
        return self.dataset.xs if self.cfg.mode == "regression" else self.vmdp.zetas

    def seeds(self):
        return [s + self.seed_offset for s in self.cfg.seeds]

    def stationary(self):
        if self.cfg.mode == "finite":
            return time_marginals(self.vmdp)
        return stationary_state_distribution(self.vmdp)

    def estimate_kernel(self) -> KernelTensor:
        if self.cfg.ode.identity_a:
            return identity_kernel(len(self.pair_labels), alpha=self.cfg.alpha)
        a = self.cfg.a_estimate
        return estimate_A(self.law, self.embeddings, alpha=self.cfg.alpha,
                          samples=a.samples, rng_seed=a.seed,
                          activation=self.cfg.activation,
                          regression_mode=self.cfg.mode == "regression",
                          method=a.method, chunk_size=a.chunk_size,
                          quad_nodes=a.quad_nodes)

    def initial_cov(self) -> np.ndarray:
        a = self.cfg.a_estimate
        return estimate_initial_cov(self.law, self.embeddings, samples=a.samples,
                                    rng_seed=a.seed, activation=self.cfg.activation,
                                    method=a.method, chunk_size=a.chunk_size,
                                    quad_nodes=a.quad_nodes)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(alpha=self.cfg.alpha, t_end=self.cfg.t_train,
                           rng_seed=seed, mode=self.cfg.mode,
                           snapshot_stride=self.cfg.snapshot_stride,
                           burn_in=self.cfg.burn_in, activation=self.cfg.activation)

    def train_file(self, n: int, seed: int, fmt: str) -> Path:
        return self.out_dir / f"train_N{n}_s{seed}.{fmt}"


# ---------------------------------------------------------------------------
# subcommands

def cmd_bellman(exp: Experiment, fmt: str) -> int:
    if exp.cfg.mode == "finite":
        vt = bellman_solve_finite(exp.vmdp)
        j_hor = vt.values.shape[0]
        cols = ["j"] + [f"v_{lab}" for lab in exp.pair_labels]
        rows = np.column_stack([np.arange(j_hor), vt.values])
    else:
        vt = bellman_solve_infinite(exp.vmdp, tol=exp.cfg.bellman_tol)
        cols = [f"v_{lab}" for lab in exp.pair_labels]
        rows = vt.values[None, :]
    path = exp.out_dir / f"bellman.{fmt}"
    mio.write_table(path, cols, rows, fmt)
    mio.write_meta(path, {"kind": "bellman_table", "mode": exp.cfg.mode,
                          "gamma": exp.vmdp.gamma, "tol": exp.cfg.bellman_tol,
                          "config_sha256": exp.config_sha, "spec_sha1": exp.spec_sha})
    print(f"bellman: wrote {path}")
    return 0


def _train_job(args) -> str:
    config_path, out_override, seed_offset, n, seed, fmt = args
    exp = Experiment(config_path, out_override, seed_offset)
    target = exp.dataset if exp.cfg.mode == "regression" else exp.vmdp
    record = train(target, exp.law, n, exp.train_config(seed))
    path = exp.train_file(n, seed, fmt)
    mio.write_train_record(path, record, exp.pair_labels, exp.config_sha,
                           exp.spec_sha, fmt)
    return str(path)


def cmd_train(exp: Experiment, fmt: str, workers: int = 1) -> int:
    jobs = [(str(exp.config_path), str(exp.out_dir), exp.seed_offset, n, seed, fmt)
            for n in exp.cfg.n_list for seed in exp.seeds()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for path in pool.map(_train_job, jobs):
                print(f"train: wrote {path}")
    else:
        for job in jobs:
            print(f"train: wrote {_train_job(job)}")
    return 0


def _write_kernel_outputs(exp: Experiment, kt: KernelTensor, fmt: str) -> Path:
    path = exp.out_dir / f"amatrix.{fmt}"
    mio.write_kernel(path, kt, exp.pair_labels, exp.config_sha, exp.spec_sha, fmt)
    return path


def cmd_amatrix(exp: Experiment, fmt: str) -> int:
    kt = exp.estimate_kernel()
    eig_min, eig_max, is_pd = pd_check(kt)
    path = _write_kernel_outputs(exp, kt, fmt)
    print(f"amatrix: wrote {path}; eig_min={eig_min:.6e} eig_max={eig_max:.6e} pd={is_pd}")
    ratio = exp.cfg.thresholds.pd_ratio
    if ratio is not None and not (eig_min > ratio * eig_max):
        print(f"amatrix: FAIL eig_min <= {ratio} * eig_max")
        return 2
    return 0


def _gaussian_h0(exp: Experiment) -> np.ndarray:
    cov = exp.initial_cov()
    if exp.cfg.mode == "finite":
        j_hor = int(exp.vmdp.spec.horizon)
        h0 = np.empty((j_hor + 1, exp.vmdp.m))
        h0[:j_hor] = draw_gaussian_table(cov, exp.cfg.ode.h0_seed, n_slices=j_hor)
        h0[j_hor] = np.repeat(exp.vmdp.spec.terminal_rewards, exp.vmdp.n_actions)
        return h0
    return draw_gaussian_table(cov, exp.cfg.ode.h0_seed)


def cmd_limit(exp: Experiment, fmt: str) -> int:
    if exp.cfg.mode == "regression":
        print("limit: use the regress subcommand for regression configs", file=sys.stderr)
        return 1
    kt = exp.estimate_kernel()
    eig_min, eig_max, is_pd = pd_check(kt)
    if not is_pd:
        raise NotPositiveDefinite(
            f"kernel matrix is not positive definite: eig_min={eig_min:.6e}, "
            f"eig_max={eig_max:.6e}")
    _write_kernel_outputs(exp, kt, fmt)
    t_end = exp.cfg.ode.t_end
    if t_end is None:
        raise MeanFieldQError("limit needs ode.t_end in the config")
    pi = exp.stationary()
    h0 = _gaussian_h0(exp)
    if exp.cfg.mode == "finite":
        sol = solve_limit_finite(exp.vmdp, kt, pi, h0, t_end, exp.cfg.ode.dt)
        v_table = bellman_solve_finite(exp.vmdp)
    else:
        sol = solve_limit_infinite(exp.vmdp, kt, pi, h0, t_end, exp.cfg.ode.dt)
        v_table = bellman_solve_infinite(exp.vmdp, tol=exp.cfg.bellman_tol)
    final_resid = float(np.max(np.abs(bellman_residual(sol.final(), exp.vmdp).values)))
    final_sup = float(np.max(np.abs(sol.final() - v_table.values)))
    trace = lyapunov_trace(sol, v_table, kt)
    slack = exp.cfg.thresholds.lyapunov_slack
    monotone = trace.is_nonincreasing(slack if slack is not None else 1e-10)

    ode_path = exp.out_dir / f"ode.{fmt}"
    mio.write_ode_solution(ode_path, sol, exp.pair_labels, exp.config_sha, exp.spec_sha,
                           fmt, extra_meta={
                               "final_bellman_residual": final_resid,
                               "final_sup_distance_to_v": final_sup,
                               "lyapunov_monotone": bool(monotone),
                               "gamma": exp.vmdp.gamma,
                               "alpha": exp.cfg.alpha,
                           })
    ly_path = exp.out_dir / f"lyapunov.{fmt}"
    mio.write_table(ly_path, ["t", "y"], np.column_stack([trace.times, trace.y_values]), fmt)
    mio.write_meta(ly_path, {"kind": "lyapunov_trace", "config_sha256": exp.config_sha,
                             "spec_sha1": exp.spec_sha})
    print(f"limit: wrote {ode_path}; final sup|h - V| = {final_sup:.3e}, "
          f"Bellman residual {final_resid:.3e}, Lyapunov monotone {monotone}")

    failed = []
    th = exp.cfg.thresholds
    if th.final_sup_tol is not None and not (final_sup < th.final_sup_tol):
        failed.append(f"final sup {final_sup:.3e} >= {th.final_sup_tol}")
    if th.lyapunov_slack is not None and not monotone:
        failed.append("Lyapunov trace increased beyond slack")
    if th.pd_ratio is not None and not (eig_min > th.pd_ratio * eig_max):
        failed.append(f"eig_min <= {th.pd_ratio} * eig_max")
    for msg in failed:
        print(f"limit: FAIL {msg}")
    return 2 if failed else 0


def cmd_compare(exp: Experiment, fmt: str) -> int:
    kernel_path = exp.out_dir / f"amatrix.{fmt}"
    if not kernel_path.exists():
        raise MeanFieldQError(f"{kernel_path} not found; run the limit subcommand first")
    kmeta, kt = mio.read_kernel(kernel_path)
    ode_meta = mio.read_meta(exp.out_dir / f"ode.{fmt}")
    runs = []
    metas = [kmeta, ode_meta]
    for n in exp.cfg.n_list:
        for seed in exp.seeds():
            path = exp.train_file(n, seed, fmt)
            if not path.exists():
                raise MeanFieldQError(f"{path} not found; run the train subcommand first")
            meta, times, snapshots, moments = mio.read_train_record(path)
            metas.append(meta)
            runs.append({"n": n, "seed": seed, "times": times, "snapshots": snapshots,
                         "moments": moments, "file": path.name})
    cmp.check_spec_hashes(metas + [{"spec_sha1": exp.spec_sha}])
    pi = exp.stationary()
    report = cmp.build_report(runs, exp.vmdp, kt, pi, exp.cfg.ode.dt,
                              distance_band=exp.cfg.thresholds.distance_band,
                              invariance_band=exp.cfg.thresholds.invariance_band)
    report.a_eig = (kmeta.get("eig_min"), kmeta.get("eig_max"))
    report.bellman_residual_final = ode_meta.get("final_bellman_residual")
    report.lyapunov_monotone = ode_meta.get("lyapunov_monotone")

    rpt_path = exp.out_dir / "report.json"
    rpt_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    mio.write_meta(rpt_path, {"kind": "run_report", "config_sha256": exp.config_sha,
                              "spec_sha1": exp.spec_sha})
    rows = np.array([[r["n"], r["seed"], r["distance"]] for r in report.per_run])
    mio.write_table(exp.out_dir / f"report_runs.{fmt}", ["n", "seed", "distance"], rows, fmt)
    print(f"compare: wrote {rpt_path}")
    for n, agg in sorted(report.per_n.items()):
        print(f"  N={n}: mean distance {agg['mean']:.5f} +- {agg['stderr']:.5f}")
    print(f"  distance factors {['%.2f' % f for f in report.distance_factors]}, "
          f"checks {report.checks}")
    return 0 if report.passed else 2


def cmd_regress(exp: Experiment, fmt: str, workers: int = 1) -> int:
    if exp.cfg.mode != "regression":
        print("regress: config mode must be 'regression'", file=sys.stderr)
        return 1
    kt = exp.estimate_kernel()
    eig_min, eig_max, is_pd = pd_check(kt)
    if not is_pd:
        raise NotPositiveDefinite(
            f"kernel matrix is not positive definite: eig_min={eig_min:.6e}")
    _write_kernel_outputs(exp, kt, fmt)
    t_end = exp.cfg.ode.t_end if exp.cfg.ode.t_end is not None else 50.0 / eig_min
    h0 = draw_gaussian_table(exp.initial_cov(), exp.cfg.ode.h0_seed)
    sol = solve_limit_regression(kt, exp.dataset.ys, h0, t_end, exp.cfg.ode.dt)
    final_sup = float(np.max(np.abs(sol.final() - exp.dataset.ys)))
    rate = fit_decay_rate(sol.times, sol.values - exp.dataset.ys[None, :])
    ode_path = exp.out_dir / f"ode.{fmt}"
    mio.write_ode_solution(ode_path, sol, exp.pair_labels, exp.config_sha, exp.spec_sha,
                           fmt, extra_meta={"final_sup_error": final_sup,
                                            "fitted_decay_rate": rate,
                                            "eig_min": eig_min, "t_end": t_end})
    print(f"regress: ODE final sup|h - y| = {final_sup:.3e}; decay rate {rate:.5f} "
          f"vs eig_min {eig_min:.5f}")

    losses = {}
    jobs = [(str(exp.config_path), str(exp.out_dir), exp.seed_offset, n, seed, fmt)
            for n in exp.cfg.n_list for seed in exp.seeds()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(_train_job, jobs))
    else:
        paths = [_train_job(job) for job in jobs]
    for (_, _, _, n, seed, _), path in zip(jobs, paths):
        _, _, snapshots, _ = mio.read_train_record(path)
        losses[f"N{n}_s{seed}"] = float(np.mean((snapshots[-1] - exp.dataset.ys) ** 2))
        print(f"regress: {path} final loss {losses[f'N{n}_s{seed}']:.5e}")

    failed = []
    th = exp.cfg.thresholds
    if th.regression_sup_tol is not None and not (final_sup < th.regression_sup_tol):
        failed.append(f"ODE sup error {final_sup:.3e} >= {th.regression_sup_tol}")
    if th.regression_rate_frac is not None and not (rate >= th.regression_rate_frac * eig_min):
        failed.append(f"decay rate {rate:.5f} < {th.regression_rate_frac} * eig_min")
    if th.sgd_loss_tol is not None:
        bad = {k: v for k, v in losses.items() if not (v < th.sgd_loss_tol)}
        if bad:
            failed.append(f"SGD losses above {th.sgd_loss_tol}: {bad}")
    report = {"final_sup_error": final_sup, "fitted_decay_rate": rate,
              "eig_min": eig_min, "eig_max": eig_max, "t_end": t_end,
              "sgd_losses": losses, "failures": failed, "passed": not failed}
    (exp.out_dir / "regress_report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8")
    for msg in failed:
        print(f"regress: FAIL {msg}")
    return 2 if failed else 0


def fit_decay_rate(times: np.ndarray, errors: np.ndarray, floor_rel: float = 1e-12) -> float:
    """Least-squares slope of log ||error||_2 over the pre-roundoff window."""
    l2 = np.linalg.norm(errors, axis=1)
    mask = l2 > max(float(l2[0]) * floor_rel, 1e-300)
    design = np.column_stack([times[mask], np.ones(int(mask.sum()))])
    slope, _ = np.linalg.lstsq(design, np.log(l2[mask]), rcond=None)[0]
    return float(-slope)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meanfieldq",
                                     description="Wide-network Q-learning laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("bellman", "solve the Bellman equation exactly and write the table"),
        ("train", "run the stochastic training sweeps"),
        ("limit", "estimate the kernel, integrate the limit ODE, write diagnostics"),
        ("compare", "compare trained trajectories against the coupled limit ODE"),
        ("amatrix", "estimate the kernel matrix and check positive definiteness"),
        ("regress", "regression mode: limit ODE, decay fit and SGD companion runs"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", default=None, help="override the config output_dir")
        p.add_argument("--seed-offset", type=int, default=0, dest="seed_offset")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        exp = Experiment(args.config, args.out, args.seed_offset)
        if args.command == "bellman":
            code = cmd_bellman(exp, args.format)
        elif args.command == "train":
            code = cmd_train(exp, args.format, args.workers)
        elif args.command == "limit":
            code = cmd_limit(exp, args.format)
        elif args.command == "compare":
            code = cmd_compare(exp, args.format)
        elif args.command == "amatrix":
            code = cmd_amatrix(exp, args.format)
        elif args.command == "regress":
            code = cmd_regress(exp, args.format, args.workers)
        else:  # pragma: no cover
            code = 1
        return code
    except MeanFieldQError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
