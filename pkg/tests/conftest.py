import json
from pathlib import Path

import numpy as np
import pytest

import meanfieldq as mq
from meanfieldq.cli import main as cli_main


def make_random_mdp(n_states=4, n_actions=3, d_x=3, d_a=2, seed=0, gamma=0.5,
                    horizon=None, mixing=0.2):
    """Well-mixing random MDP with distinct-direction embeddings."""
    rng = np.random.default_rng(seed)
    while True:
        states = rng.standard_normal((n_states, d_x))
        actions = rng.standard_normal((n_actions, d_a))
        zetas = np.array([np.concatenate([x, a]) for x in states for a in actions])
        norms = np.linalg.norm(zetas, axis=1)
        cos = np.abs(zetas @ zetas.T) / np.outer(norms, norms)
        np.fill_diagonal(cos, 0.0)
        if cos.max() < 1.0 - 1e-6:
            break
    trans = mixing + rng.random((n_states, n_actions, n_states))
    trans /= trans.sum(axis=2, keepdims=True)
    if horizon is None:
        rewards = rng.random((n_states, n_actions))
        spec = mq.MdpSpec(states=states, actions=actions, transition=trans,
                          rewards=rewards, gamma=gamma)
    else:
        rewards = rng.random((horizon, n_states, n_actions))
        spec = mq.MdpSpec(states=states, actions=actions, transition=trans,
                          rewards=rewards, gamma=gamma, horizon=horizon,
                          terminal_rewards=rng.random(n_states),
                          initial_dist=np.full(n_states, 1.0 / n_states))
    return mq.validate_mdp(spec)


@pytest.fixture(scope="session")
def bundled_vmdp():
    return mq.validate_mdp(mq.load_mdp_spec(
        Path(__file__).parent.parent / "src/meanfieldq/specs/qmdp4x3.json"))


@pytest.fixture(scope="session")
def bundled_vmdp_j4():
    return mq.validate_mdp(mq.load_mdp_spec(
        Path(__file__).parent.parent / "src/meanfieldq/specs/qmdp4x3_j4.json"))


@pytest.fixture(scope="session")
def bundled_dataset():
    return mq.load_regression_dataset(
        Path(__file__).parent.parent / "src/meanfieldq/specs/reg10x3.json")


@pytest.fixture(scope="session")
def sweep_dir(tmp_path_factory):
    """The width sweep shared by the trajectory-convergence and
    measure-invariance acceptance checks plus the boundedness properties:
    N in {250, 1000, 4000}, 10 seeds each, T = 5, alpha = 1, on the bundled
    model, driven through the command-line surface."""
    import time

    out = tmp_path_factory.mktemp("sweep")
    config = Path(__file__).parent.parent / "configs/mean_field_sweep.json"
    t0 = time.perf_counter()
    assert cli_main(["train", "--config", str(config), "--out", str(out),
                     "--workers", "4"]) == 0
    assert cli_main(["limit", "--config", str(config), "--out", str(out)]) in (0, 2)
    code = cli_main(["compare", "--config", str(config), "--out", str(out)])
    (out / "sweep_elapsed").write_text(str(time.perf_counter() - t0))
    (out / "compare_exit_code").write_text(str(code))
    return out


@pytest.fixture(scope="session")
def sweep_report(sweep_dir):
    return json.loads((sweep_dir / "report.json").read_text())
