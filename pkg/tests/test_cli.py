import json
from pathlib import Path

import numpy as np

import meanfieldq as mq
from meanfieldq import io as mio
from meanfieldq.cli import main
from meanfieldq.compare import coupled_distance

CONFIGS = Path(__file__).parent.parent / "configs"


def _write_config(tmp_path, name="cfg", **overrides):
    doc = {
        "name": "cli_test",
        "mode": "infinite",
        "mdp_path": "bundled:qmdp4x3",
        "alpha": 1.0,
        "n_list": [50, 100],
        "seeds": [0, 1],
        "t_train": 0.5,
        "ode": {"dt": 0.02, "t_end": 0.5, "h0_seed": 1},
        "a_estimate": {"method": "quadrature"},
        "thresholds": {},
        "output_dir": str(tmp_path / "out"),
    }
    doc.update(overrides)
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(doc))
    return p


def test_bellman_matches_module_solver(tmp_path, bundled_vmdp):
    cfg = _write_config(tmp_path)
    assert main(["bellman", "--config", str(cfg)]) == 0
    cols, rows = mio.read_table(tmp_path / "out" / "bellman.csv")
    vt = mq.bellman_solve_infinite(bundled_vmdp, tol=1e-12)
    assert np.max(np.abs(rows[0] - vt.values)) < 1e-12
    meta = mio.read_meta(tmp_path / "out" / "bellman.csv")
    assert "config_sha256" in meta and "spec_sha1" in meta


def test_bellman_finite_mode(tmp_path, bundled_vmdp_j4):
    cfg = _write_config(tmp_path, mode="finite", mdp_path="bundled:qmdp4x3_j4")
    assert main(["bellman", "--config", str(cfg)]) == 0
    _, rows = mio.read_table(tmp_path / "out" / "bellman.csv")
    vt = mq.bellman_solve_finite(bundled_vmdp_j4)
    assert rows.shape[0] == 5
    assert np.max(np.abs(rows[:, 1:] - vt.values)) < 1e-12


def test_train_rerun_is_byte_identical(tmp_path):
    cfg = _write_config(tmp_path, n_list=[40], seeds=[0])
    assert main(["train", "--config", str(cfg)]) == 0
    data1 = (tmp_path / "out" / "train_N40_s0.csv").read_bytes()
    assert main(["train", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "train_N40_s0.csv").read_bytes() == data1


def test_train_worker_count_does_not_change_outputs(tmp_path):
    cfg = _write_config(tmp_path, n_list=[30, 60], seeds=[0, 1])
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "w1")]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "w4"),
                 "--workers", "4"]) == 0
    for f in sorted((tmp_path / "w1").glob("train_*.csv")):
        assert f.read_bytes() == (tmp_path / "w4" / f.name).read_bytes()


def test_train_snapshot_count(tmp_path):
    # N = 40, T = 0.5: 20 steps, stride max(1, 40//100) = 1 -> 21 rows
    cfg = _write_config(tmp_path, n_list=[40], seeds=[0])
    main(["train", "--config", str(cfg)])
    _, times, _, _ = mio.read_train_record(tmp_path / "out" / "train_N40_s0.csv")
    assert times.shape[0] == 21


def test_seed_offset_shifts_filenames_and_streams(tmp_path):
    cfg = _write_config(tmp_path, n_list=[30], seeds=[0])
    main(["train", "--config", str(cfg)])
    main(["train", "--config", str(cfg), "--seed-offset", "5"])
    base = tmp_path / "out"
    assert (base / "train_N30_s0.csv").exists() and (base / "train_N30_s5.csv").exists()
    _, _, snap0, _ = mio.read_train_record(base / "train_N30_s0.csv")
    _, _, snap5, _ = mio.read_train_record(base / "train_N30_s5.csv")
    assert not np.array_equal(snap0, snap5)


def test_gamma_near_zero_single_state_run_approaches_reward(tmp_path):
    spec_doc = {
        "states": [[1.0]], "actions": [[0.5]], "transition": [[[1.0]]],
        "rewards": [[0.7]], "gamma": 1e-12,
    }
    spec_path = tmp_path / "one.json"
    spec_path.write_text(json.dumps(spec_doc))
    cfg = _write_config(tmp_path, mdp_path=str(spec_path), n_list=[1000], seeds=[3],
                        t_train=20.0)
    assert main(["train", "--config", str(cfg)]) == 0
    _, _, snapshots, _ = mio.read_train_record(tmp_path / "out" / "train_N1000_s3.csv")
    assert abs(snapshots[-1, 0] - 0.7) < 0.05


def test_limit_and_compare_pipeline(tmp_path):
    cfg = _write_config(tmp_path, thresholds={"distance_band": [1.0, 99.0]})
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["limit", "--config", str(cfg)]) == 0
    assert main(["compare", "--config", str(cfg)]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["passed"]
    assert set(report["per_n"]) == {"50", "100"}
    assert report["per_n"]["100"]["mean"] < report["per_n"]["50"]["mean"]
    # doubled width with the same seeds must not produce the same distances
    d50 = [r["distance"] for r in report["per_run"] if r["n"] == 50]
    d100 = [r["distance"] for r in report["per_run"] if r["n"] == 100]
    assert all(abs(a - b) > 0 for a, b in zip(d50, d100))


def test_compare_requires_limit_outputs(tmp_path):
    cfg = _write_config(tmp_path)
    main(["train", "--config", str(cfg)])
    assert main(["compare", "--config", str(cfg)]) == 1  # no amatrix yet


def test_compare_detects_spec_hash_mismatch(tmp_path, bundled_vmdp):
    cfg = _write_config(tmp_path)
    main(["train", "--config", str(cfg)])
    main(["limit", "--config", str(cfg)])
    # corrupt one sidecar's spec hash
    meta_path = tmp_path / "out" / "train_N50_s0.meta.json"
    meta = json.loads(meta_path.read_text())
    meta["spec_sha1"] = "0" * 40
    meta_path.write_text(json.dumps(meta))
    assert main(["compare", "--config", str(cfg)]) == 1


def test_self_comparison_has_zero_distance(bundled_vmdp):
    """The limit trajectory compared against itself (the infinite-width
    surrogate) must sit at distance exactly zero."""
    kt = mq.estimate_A(mq.InitLaw(), bundled_vmdp.zetas, alpha=1.0, samples=1,
                       rng_seed=0, method="quadrature")
    pi = mq.stationary_state_distribution(bundled_vmdp)
    cov = mq.estimate_initial_cov(mq.InitLaw(), bundled_vmdp.zetas, samples=1,
                                  rng_seed=0, method="quadrature")
    h0 = mq.draw_gaussian_table(cov, 3)
    sol = mq.solve_limit_infinite(bundled_vmdp, kt, pi, h0, 1.0, 0.01)
    dist, _ = coupled_distance(sol.times, sol.values, bundled_vmdp, kt, pi, 0.01)
    assert dist == 0.0


def test_identity_kernel_flag_reproduces_diagonal_dynamics(tmp_path):
    spec_doc = {
        "states": [[1.0]], "actions": [[0.5]], "transition": [[[1.0]]],
        "rewards": [[0.4]], "gamma": 0.5,
    }
    spec_path = tmp_path / "one.json"
    spec_path.write_text(json.dumps(spec_doc))
    cfg = _write_config(tmp_path, mdp_path=str(spec_path),
                        ode={"dt": 0.01, "t_end": 10.0, "h0_seed": 1,
                             "identity_a": True})
    assert main(["limit", "--config", str(cfg)]) == 0
    _, times, values = mio.read_ode_solution(tmp_path / "out" / "ode.csv")
    h0 = values[0, 0]
    expected = 0.8 + (h0 - 0.8) * np.exp(-0.5 * times)  # fixed point r/(1-gamma)
    assert np.max(np.abs(values[:, 0] - expected)) < 1e-8


def test_limit_reports_convergence_below_discount_threshold(tmp_path):
    # reduced-horizon variant of the small-discount run; tol set accordingly
    cfg = _write_config(tmp_path, alpha=6.0,
                        ode={"dt": 0.01, "t_end": 60.0, "h0_seed": 902},
                        thresholds={"final_sup_tol": 1e-2, "lyapunov_slack": 1e-10,
                                    "pd_ratio": 1e-4})
    assert main(["limit", "--config", str(cfg)]) == 0
    meta = mio.read_meta(tmp_path / "out" / "ode.csv")
    assert meta["final_sup_distance_to_v"] < 1e-2
    assert meta["lyapunov_monotone"]


def test_limit_finite_reports_per_slice_convergence(tmp_path, bundled_vmdp_j4):
    cfg = _write_config(tmp_path, mode="finite", mdp_path="bundled:qmdp4x3_j4",
                        alpha=6.0, ode={"dt": 0.01, "t_end": 150.0, "h0_seed": 903},
                        thresholds={"final_sup_tol": 1e-2})
    assert main(["limit", "--config", str(cfg)]) == 0
    _, times, values = mio.read_ode_solution(tmp_path / "out" / "ode.csv")
    vt = mq.bellman_solve_finite(bundled_vmdp_j4)
    err = np.abs(values - vt.values[None, :, :])
    assert err[-1].max() < 1e-2
    for j in range(4):
        assert err[-1, j].max() < err[0, j].max()


def test_amatrix_exit_codes(tmp_path):
    cfg = _write_config(tmp_path, thresholds={"pd_ratio": 1e-4})
    assert main(["amatrix", "--config", str(cfg)]) == 0
    # an impossible gate forces the acceptance-failure exit code
    cfg_bad = _write_config(tmp_path, name="bad", thresholds={"pd_ratio": 1.5})
    assert main(["amatrix", "--config", str(cfg_bad)]) == 2


def test_error_exit_code_for_bad_config(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text(json.dumps({"name": "x", "mode": "infinite",
                             "mdp_path": "bundled:qmdp4x3",
                             "output_dir": str(tmp_path), "bogus": 1}))
    assert main(["bellman", "--config", str(p)]) == 1


def test_json_format_outputs(tmp_path):
    cfg = _write_config(tmp_path, n_list=[30], seeds=[0])
    assert main(["train", "--config", str(cfg), "--format", "json"]) == 0
    meta, times, snaps, _ = mio.read_train_record(tmp_path / "out" / "train_N30_s0.json")
    assert times[0] == 0.0 and snaps.shape[1] == 12


def test_regress_pipeline_small(tmp_path):
    doc = {
        "name": "reg_small",
        "mode": "regression",
        "dataset_path": "bundled:reg10x3",
        "alpha": 25.0,
        "n_list": [400],
        "seeds": [5],
        "t_train": 2.0,
        "ode": {"dt": 0.02, "t_end": 60.0, "h0_seed": 904},
        "a_estimate": {"method": "quadrature"},
        "thresholds": {"regression_sup_tol": 1e-4, "regression_rate_frac": 0.95,
                       "sgd_loss_tol": 0.5},
        "output_dir": str(tmp_path / "out"),
    }
    p = tmp_path / "reg.json"
    p.write_text(json.dumps(doc))
    assert main(["regress", "--config", str(p)]) == 0
    report = json.loads((tmp_path / "out" / "regress_report.json").read_text())
    assert report["passed"] and report["fitted_decay_rate"] > 0
