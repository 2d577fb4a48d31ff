import json

import numpy as np
import pytest

import meanfieldq as mq
from meanfieldq import io as mio
from meanfieldq.config import ExperimentConfig, load_config, save_config
from meanfieldq.errors import ConfigError


BASE = {
    "name": "t", "mode": "infinite", "mdp_path": "bundled:qmdp4x3",
    "output_dir": "out/t",
}


def test_config_round_trip_identity(tmp_path):
    doc = dict(BASE)
    doc.update({"alpha": 2.5, "n_list": [100, 200], "seeds": [3, 4],
                "ode": {"dt": 0.02, "t_end": 7.0},
                "thresholds": {"pd_ratio": 1e-4, "distance_band": [1.3, 3.0]}})
    cfg = ExperimentConfig.from_dict(doc)
    p = tmp_path / "cfg.json"
    save_config(cfg, p)
    cfg2 = load_config(p)
    assert cfg == cfg2
    assert ExperimentConfig.from_dict(cfg2.to_dict()) == cfg


@pytest.mark.parametrize("mutate", [
    lambda d: d.update({"bogus": 1}),
    lambda d: d.update({"init": {"c_law": "uniform", "spread": 2}}),
    lambda d: d.update({"ode": {"dt": 0.1, "verbose": True}}),
    lambda d: d.update({"a_estimate": {"sample": 10}}),
    lambda d: d.update({"thresholds": {"pd_cut": 0.1}}),
])
def test_config_rejects_unknown_fields(mutate):
    doc = dict(BASE)
    mutate(doc)
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict(doc)


def test_config_requires_mode_specific_paths():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"name": "x", "mode": "regression",
                                    "output_dir": "o"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"name": "x", "mode": "infinite",
                                    "output_dir": "o"})


def test_config_orders_n_list():
    doc = dict(BASE)
    doc["n_list"] = [400, 100]
    with pytest.raises(ConfigError, match="ascending"):
        ExperimentConfig.from_dict(doc)


def test_git_blob_sha1_known_value():
    # `echo hello | git hash-object --stdin`
    assert mio.git_blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_csv_floats_round_trip_exactly(tmp_path):
    rng = np.random.default_rng(0)
    rows = np.concatenate([rng.standard_normal((4, 3)) * 10.0 ** rng.integers(-200, 200, (4, 3)),
                           np.array([[0.1, 1e-300, -1e300]])])
    p = tmp_path / "x.csv"
    mio.write_table(p, ["a", "b", "c"], rows)
    cols, back = mio.read_table(p)
    assert cols == ["a", "b", "c"]
    assert np.array_equal(back, rows)


def test_json_table_round_trip(tmp_path):
    rows = np.array([[1.5, -2.25], [3.0, 1e-17]])
    p = tmp_path / "x.json"
    mio.write_table(p, ["u", "v"], rows, fmt="json")
    cols, back = mio.read_table(p)
    assert cols == ["u", "v"] and np.array_equal(back, rows)


def test_train_record_round_trip(tmp_path, bundled_vmdp):
    cfg = mq.TrainConfig(alpha=1.0, t_end=0.2, rng_seed=3, mode="infinite")
    rec = mq.train(bundled_vmdp, mq.InitLaw(), 60, cfg)
    p = tmp_path / "rec.csv"
    mio.write_train_record(p, rec, bundled_vmdp.pair_labels(), "cfghash", "spechash")
    meta, times, snapshots, moments = mio.read_train_record(p)
    assert np.array_equal(times, rec.times)
    assert np.array_equal(snapshots, rec.snapshots)
    assert np.array_equal(moments, rec.moments)
    assert meta["config_sha256"] == "cfghash" and meta["spec_sha1"] == "spechash"
    params = np.load(tmp_path / "rec_params.npz")
    assert np.array_equal(params["c"], rec.final_params.c)
    assert np.array_equal(params["w"], rec.final_params.w)


def test_finite_train_record_round_trip(tmp_path, bundled_vmdp_j4):
    cfg = mq.TrainConfig(alpha=1.0, t_end=0.2, rng_seed=3, mode="finite")
    rec = mq.train(bundled_vmdp_j4, mq.InitLaw(), 40, cfg)
    p = tmp_path / "rec.csv"
    mio.write_train_record(p, rec, bundled_vmdp_j4.pair_labels(), "c", "s")
    _, times, snapshots, _ = mio.read_train_record(p)
    assert snapshots.shape == rec.snapshots.shape
    assert np.array_equal(snapshots, rec.snapshots)


def test_ode_solution_round_trip(tmp_path):
    sol = mq.integrate(lambda y: -y, np.array([1.0, 2.0]), 1.0, 0.25)
    p = tmp_path / "ode.csv"
    mio.write_ode_solution(p, sol, ["a", "b"], "c", "s")
    meta, times, values = mio.read_ode_solution(p)
    assert np.array_equal(times, sol.times) and np.array_equal(values, sol.values)
    assert meta["dt"] == 0.25


def test_kernel_round_trip(tmp_path):
    kt = mq.identity_kernel(3, alpha=2.0)
    mq.pd_check(kt)
    p = tmp_path / "amatrix.csv"
    mio.write_kernel(p, kt, ["a", "b", "c"], "cfg", "spec")
    meta, back = mio.read_kernel(p)
    assert np.array_equal(back.entries, kt.entries)
    assert meta["eig_min"] == 2.0 and back.alpha == 2.0
