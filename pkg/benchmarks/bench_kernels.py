"""Benchmark the numba kernels against the pure-numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--quick]

Covers the three hot paths: the Q-learning training loop, Monte Carlo
estimation of the kernel matrix, and RK4 integration of the limit ODE.
"""

import argparse
import time
from pathlib import Path

import numpy as np

import meanfieldq as mq
from meanfieldq.backend import get_kernels

SPEC = Path(__file__).parent.parent / "src/meanfieldq/specs/qmdp4x3.json"


def timeit(fn, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_train(vmdp, law, backend, n_units, t_end):
    cfg = mq.TrainConfig(alpha=1.0, t_end=t_end, rng_seed=0, mode="infinite")
    return timeit(lambda: mq.train(vmdp, law, n_units, cfg, backend=backend))


def bench_estimate(vmdp, law, backend, samples):
    return timeit(lambda: mq.estimate_A(law, vmdp.zetas, alpha=1.0, samples=samples,
                                        rng_seed=0, backend=backend))


def bench_integrate(vmdp, law, backend, t_end):
    kern = get_kernels(backend)
    kt = mq.estimate_A(law, vmdp.zetas, alpha=6.0, samples=100_000, rng_seed=0)
    pi = mq.stationary_state_distribution(vmdp)
    b_mat = kt.entries * pi.probs[None, :]
    h0 = np.zeros(vmdp.m)

    def run():
        def rhs(y):
            return kern.rhs_infinite(y, b_mat, vmdp.r_flat, vmdp.p_flat,
                                     vmdp.gamma, vmdp.n_actions)

        mq.integrate(rhs, h0, t_end, 0.01)

    return timeit(run)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller workloads")
    args = parser.parse_args()

    vmdp = mq.validate_mdp(mq.load_mdp_spec(SPEC))
    law = mq.InitLaw()
    n_units = 500 if args.quick else 2000
    t_train = 1.0 if args.quick else 2.0
    samples = 200_000 if args.quick else 1_000_000
    t_ode = 20.0 if args.quick else 100.0

    # warm both backends so numba's compile time is not measured
    for backend in ("numba", "numpy"):
        cfg = mq.TrainConfig(alpha=1.0, t_end=0.1, rng_seed=0, mode="infinite")
        mq.train(vmdp, law, 50, cfg, backend=backend)
        mq.estimate_A(law, vmdp.zetas, alpha=1.0, samples=1000, rng_seed=0,
                      backend=backend)

    rows = []
    for name, fn, arg in [
        (f"train loop (N={n_units}, T={t_train})", bench_train, (n_units, t_train)),
        (f"kernel estimate ({samples:,} samples)", bench_estimate, (samples,)),
        (f"RK4 limit ODE (t_end={t_ode}, dt=0.01)", bench_integrate, (t_ode,)),
    ]:
        t_nb = fn(vmdp, law, "numba", *arg)
        t_np = fn(vmdp, law, "numpy", *arg)
        rows.append((name, t_nb, t_np))

    width = max(len(r[0]) for r in rows)
    print(f"{'benchmark':<{width}}  {'numba':>9}  {'numpy':>9}  {'speedup':>8}")
    for name, t_nb, t_np in rows:
        print(f"{name:<{width}}  {t_nb:>8.3f}s  {t_np:>8.3f}s  {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
