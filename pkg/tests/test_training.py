import math

import numpy as np
import pytest

import meanfieldq as mq


def _two_state_one_dim():
    """Tiny MDP with 1-d state/action embeddings for hand calculations."""
    spec = mq.MdpSpec(states=np.array([[1.0], [0.5]]),
                      actions=np.array([[2.0], [-1.0]]),
                      transition=np.full((2, 2, 2), 0.5),
                      rewards=np.array([[0.3, 0.1], [0.2, 0.4]]),
                      gamma=0.8)
    return mq.validate_mdp(spec)


# ---------------------------------------------------------------------------
# infinite-horizon step

def test_q_step_zero_residual_is_identity():
    v = _two_state_one_dim()
    params = mq.init_params(mq.InitLaw(), 7, v.d, rng_seed=1)
    # engineer D = 0: hand the step a reward equal to prediction minus target part
    q_pred = mq.forward(params, v.zetas[v.pair_index(0, 0)])
    q_max = max(mq.forward(params, v.zetas[v.pair_index(1, a)]) for a in range(2))
    r_fake = q_pred - v.gamma * q_max
    out = mq.q_step_infinite(params, (0, 0, 1, r_fake), alpha=0.9, gamma=v.gamma, vmdp=v)
    assert np.array_equal(out.c, params.c) and np.array_equal(out.w, params.w)


def test_q_step_zero_learning_rate_is_identity():
    v = _two_state_one_dim()
    params = mq.init_params(mq.InitLaw(), 5, v.d, rng_seed=2)
    out = mq.q_step_infinite(params, (0, 1, 1, 0.25), alpha=0.0, gamma=v.gamma, vmdp=v)
    assert np.array_equal(out.c, params.c) and np.array_equal(out.w, params.w)


def test_q_step_single_unit_hand_computation():
    """N = 1, tanh: both update lines written out by hand.

    zeta_k = (1, 2); the target maximizes over the two actions at the next
    state; the residual multiplies sigma for the c-update and
    c sigma' zeta for the w-update, both from the incoming parameters."""
    v = _two_state_one_dim()
    c0, w0 = 0.5, (0.1, -0.2)
    alpha, gamma, r = 0.7, 0.8, 0.3
    params = mq.NetworkParams(c=np.array([c0]), w=np.array([list(w0)]), activation="tanh")

    s_k = w0[0] * 1.0 + w0[1] * 2.0                      # -0.3
    q_pred = c0 * math.tanh(s_k)
    q_a0 = c0 * math.tanh(w0[0] * 0.5 + w0[1] * 2.0)     # next state, action (2,)
    q_a1 = c0 * math.tanh(w0[0] * 0.5 + w0[1] * -1.0)    # next state, action (-1,)
    d_resid = r + gamma * max(q_a0, q_a1) - q_pred
    c_expected = c0 + alpha * d_resid * math.tanh(s_k)
    sigp = 1.0 - math.tanh(s_k) ** 2
    w_expected = (w0[0] + alpha * d_resid * c0 * sigp * 1.0,
                  w0[1] + alpha * d_resid * c0 * sigp * 2.0)

    out = mq.q_step_infinite(params, (0, 0, 1, r), alpha=alpha, gamma=gamma, vmdp=v)
    assert abs(out.c[0] - c_expected) < 1e-15
    assert abs(out.w[0, 0] - w_expected[0]) < 1e-15
    assert abs(out.w[0, 1] - w_expected[1]) < 1e-15


# ---------------------------------------------------------------------------
# finite-horizon step

def _finite_two_state(j_hor=2, gamma=1.0, rewards=None, terminal=None):
    n, k = 2, 2
    spec = mq.MdpSpec(
        states=np.array([[1.0], [0.5]]), actions=np.array([[2.0], [-1.0]]),
        transition=np.full((n, k, n), 0.5),
        rewards=np.zeros((j_hor, n, k)) if rewards is None else rewards,
        gamma=gamma, horizon=j_hor,
        terminal_rewards=np.zeros(n) if terminal is None else terminal,
        initial_dist=np.array([0.5, 0.5]))
    return mq.validate_mdp(spec)


def test_q_step_finite_zero_residuals_is_identity():
    v = _finite_two_state()
    params = mq.init_params(mq.InitLaw(), 6, v.d, rng_seed=3, horizon=2)
    params.c[:] = 0.0  # zero network + zero rewards gives zero residuals
    episode = (np.array([0, 1, 0]), np.array([1, 0]), np.zeros(3))
    out = mq.q_step_finite(params, episode, alpha=0.7, gamma=1.0, vmdp=v)
    assert np.array_equal(out.c, params.c) and np.array_equal(out.w, params.w)


def test_q_step_finite_horizon_one_matches_terminal_target():
    """J = 1: the single slice updates like the infinite-horizon rule with
    the target r_0 + gamma * r(1, x_1)."""
    rewards = np.array([[[0.3, 0.1], [0.2, 0.4]]])
    terminal = np.array([0.9, -0.2])
    v = _finite_two_state(j_hor=1, gamma=0.6, rewards=rewards, terminal=terminal)
    params = mq.init_params(mq.InitLaw(), 5, v.d, rng_seed=4, horizon=1)
    episode = (np.array([0, 1]), np.array([0]), np.array([0.3, terminal[1]]))
    out = mq.q_step_finite(params, episode, alpha=0.8, gamma=0.6, vmdp=v)

    zeta = v.zetas[v.pair_index(0, 0)]
    sig, sigp, _ = mq.activation("tanh", params.w @ zeta)
    root_n = math.sqrt(5)
    target = 0.3 + 0.6 * terminal[1]
    d_resid = target - params.c[:, 0] @ sig / root_n
    scale = 0.8 * 5 ** -1.5
    assert np.allclose(out.c[:, 0], params.c[:, 0] + scale * d_resid * sig, atol=1e-15)
    assert np.allclose(out.w, params.w + scale * d_resid
                       * (params.c[:, 0] * sigp)[:, None] * zeta[None, :], atol=1e-15)


def test_q_step_finite_two_slice_hand_computation():
    """J = 2, N = 1: full residual cascade written out by hand."""
    rewards = np.array([[[0.3, 0.1], [0.2, 0.4]],
                        [[-0.1, 0.5], [0.0, 0.2]]])
    terminal = np.array([0.7, -0.4])
    gamma, alpha = 0.9, 0.6
    v = _finite_two_state(j_hor=2, gamma=gamma, rewards=rewards, terminal=terminal)
    c0 = np.array([[0.4, -0.3]])
    w0 = np.array([[0.2, -0.1]])
    params = mq.NetworkParams(c=c0.copy(), w=w0.copy(), activation="tanh")
    episode = (np.array([0, 1, 0]), np.array([0, 1]),
               np.array([rewards[0, 0, 0], rewards[1, 1, 1], terminal[0]]))

    # slice 0: zeta = (1, 2), next state 1, max over Q(1, x=1, a')
    z0 = (1.0, 2.0)
    s0 = w0[0, 0] * z0[0] + w0[0, 1] * z0[1]
    q0 = c0[0, 0] * math.tanh(s0)
    q1_a0 = c0[0, 1] * math.tanh(w0[0, 0] * 0.5 + w0[0, 1] * 2.0)
    q1_a1 = c0[0, 1] * math.tanh(w0[0, 0] * 0.5 + w0[0, 1] * -1.0)
    d0 = rewards[0, 0, 0] + gamma * max(q1_a0, q1_a1) - q0
    # slice 1: zeta = (0.5, -1), next state 0, target is the terminal reward
    z1 = (0.5, -1.0)
    s1 = w0[0, 0] * z1[0] + w0[0, 1] * z1[1]
    q1 = c0[0, 1] * math.tanh(s1)
    d1 = rewards[1, 1, 1] + gamma * terminal[0] - q1

    c_exp = np.array([[c0[0, 0] + alpha * d0 * math.tanh(s0),
                       c0[0, 1] + alpha * d1 * math.tanh(s1)]])
    w_step = (alpha * d0 * c0[0, 0] * (1 - math.tanh(s0) ** 2) * np.array(z0)
              + alpha * d1 * c0[0, 1] * (1 - math.tanh(s1) ** 2) * np.array(z1))
    out = mq.q_step_finite(params, episode, alpha=alpha, gamma=gamma, vmdp=v)
    assert np.allclose(out.c, c_exp, atol=1e-15)
    assert np.allclose(out.w, w0 + w_step, atol=1e-15)


# ---------------------------------------------------------------------------
# regression step

def test_sgd_step_zero_residual_and_zero_rate():
    params = mq.init_params(mq.InitLaw(), 6, 3, rng_seed=5)
    x = np.array([0.2, -0.7, 1.1])
    y = mq.forward(params, x)
    out = mq.sgd_step_regression(params, (x, y), alpha=1.3)
    assert np.array_equal(out.c, params.c) and np.array_equal(out.w, params.w)
    out = mq.sgd_step_regression(params, (x, y + 5.0), alpha=0.0)
    assert np.array_equal(out.c, params.c) and np.array_equal(out.w, params.w)


def test_sgd_step_single_unit_hand_formula():
    c0, w0 = -0.8, (0.3, 0.4)
    alpha, y = 1.1, 0.6
    x = (1.0, -2.0)
    params = mq.NetworkParams(c=np.array([c0]), w=np.array([list(w0)]), activation="sigmoid")
    s = w0[0] * x[0] + w0[1] * x[1]
    sig = 1.0 / (1.0 + math.exp(-s))
    sigp = sig * (1.0 - sig)
    d_resid = y - c0 * sig
    out = mq.sgd_step_regression(params, (np.array(x), y), alpha=alpha)
    assert abs(out.c[0] - (c0 + alpha * d_resid * sig)) < 1e-15
    assert abs(out.w[0, 0] - (w0[0] + alpha * d_resid * c0 * sigp * x[0])) < 1e-15
    assert abs(out.w[0, 1] - (w0[1] + alpha * d_resid * c0 * sigp * x[1])) < 1e-15


# ---------------------------------------------------------------------------
# full runs

def test_train_rejects_zero_steps(bundled_vmdp):
    cfg = mq.TrainConfig(alpha=1.0, t_end=0.001, rng_seed=0, mode="infinite")
    with pytest.raises(ValueError, match="one step"):
        mq.train(bundled_vmdp, mq.InitLaw(), 100, cfg)


def test_train_single_step_has_two_snapshots(bundled_vmdp):
    cfg = mq.TrainConfig(alpha=1.0, t_end=0.01, rng_seed=0, mode="infinite")
    rec = mq.train(bundled_vmdp, mq.InitLaw(), 100, cfg)
    assert rec.times.shape == (2,) and rec.times[0] == 0.0 and rec.times[1] == 0.01


@pytest.mark.parametrize("steps,stride,expected", [(10, 3, 5), (10, 5, 3), (4, 1, 5)])
def test_snapshot_count_arithmetic(steps, stride, expected):
    from meanfieldq.training import snapshot_steps

    snaps = snapshot_steps(steps, stride)
    assert len(snaps) == expected
    assert snaps[0] == 0 and snaps[-1] == steps


def test_first_snapshot_equals_fresh_network(bundled_vmdp):
    law = mq.InitLaw()
    cfg = mq.TrainConfig(alpha=1.0, t_end=0.3, rng_seed=17, mode="infinite")
    rec = mq.train(bundled_vmdp, law, 128, cfg)
    fresh = mq.init_params(law, 128, bundled_vmdp.d, rng_seed=17)
    expected = mq.forward_table(fresh, bundled_vmdp.zetas)
    np.testing.assert_allclose(rec.snapshots[0], expected, rtol=0, atol=0)
    from meanfieldq.network import MOMENT_KEYS

    mom0 = mq.measure_moments(fresh)
    for i, key in enumerate(MOMENT_KEYS):
        assert rec.moments[0, i] == pytest.approx(mom0[key], rel=1e-12, abs=1e-13)


def test_train_deterministic_bitwise(bundled_vmdp):
    cfg = mq.TrainConfig(alpha=1.0, t_end=0.5, rng_seed=5, mode="infinite")
    a = mq.train(bundled_vmdp, mq.InitLaw(), 200, cfg)
    b = mq.train(bundled_vmdp, mq.InitLaw(), 200, cfg)
    assert np.array_equal(a.snapshots, b.snapshots)
    assert np.array_equal(a.moments, b.moments)
    assert np.array_equal(a.final_params.c, b.final_params.c)
    assert np.array_equal(a.final_params.w, b.final_params.w)


def test_single_state_tiny_discount_converges_to_reward():
    """gamma ~ 0 turns the run into a stochastic linear contraction toward r;
    the frozen-measure recursion h_{k+1} = h_k + (alpha a0 / N)(r - h_k) is
    the closed-form oracle."""
    r_val = 0.7
    spec = mq.MdpSpec(states=np.array([[1.0]]), actions=np.array([[0.5]]),
                      transition=np.ones((1, 1, 1)), rewards=np.array([[r_val]]),
                      gamma=1e-12)
    v = mq.validate_mdp(spec)
    law = mq.InitLaw()
    n, t_end, alpha = 1000, 20.0, 1.0
    cfg = mq.TrainConfig(alpha=alpha, t_end=t_end, rng_seed=11, mode="infinite")
    rec = mq.train(v, law, n, cfg)
    h_final = rec.snapshots[-1, 0]
    assert abs(h_final - r_val) < 0.05

    a0 = mq.estimate_A(law, v.zetas, alpha=1.0, samples=1, rng_seed=0,
                       method="quadrature").entries[0, 0]
    steps = int(n * t_end)
    oracle = r_val + (1.0 - alpha * a0 / n) ** steps * (rec.snapshots[0, 0] - r_val)
    assert abs(h_final - oracle) < 0.05


def test_training_loss_helper(bundled_dataset):
    cfg = mq.TrainConfig(alpha=2.0, t_end=0.5, rng_seed=3, mode="regression")
    rec = mq.train(bundled_dataset, mq.InitLaw(), 100, cfg)
    loss = mq.training_loss(rec, bundled_dataset)
    assert loss == pytest.approx(np.mean((rec.snapshots[-1] - bundled_dataset.ys) ** 2))


def test_record_grid_invariants(bundled_vmdp):
    cfg = mq.TrainConfig(alpha=1.0, t_end=1.0, rng_seed=1, mode="infinite",
                         snapshot_stride=7)
    rec = mq.train(bundled_vmdp, mq.InitLaw(), 97, cfg)
    assert rec.times[0] == 0.0
    assert np.all(np.diff(rec.times) > 0)
    assert rec.snapshots.shape[0] == rec.times.shape[0] == rec.moments.shape[0]


def test_dataset_rejects_parallel_points():
    with pytest.raises(ValueError, match="parallel"):
        mq.RegressionDataset(xs=np.array([[1.0, 0.0], [2.0, 0.0]]), ys=np.array([0.0, 1.0]))


def test_dataset_loader_rejects_unknown_fields(tmp_path):
    import json

    p = tmp_path / "ds.json"
    p.write_text(json.dumps({"xs": [[1.0]], "ys": [0.5], "weights": [1]}))
    with pytest.raises(ValueError, match="unknown"):
        mq.load_regression_dataset(p)


def test_burn_in_changes_start_state_only(bundled_vmdp):
    base = mq.TrainConfig(alpha=1.0, t_end=0.2, rng_seed=9, mode="infinite")
    burned = mq.TrainConfig(alpha=1.0, t_end=0.2, rng_seed=9, mode="infinite", burn_in=50)
    a = mq.train(bundled_vmdp, mq.InitLaw(), 100, base)
    b = mq.train(bundled_vmdp, mq.InitLaw(), 100, burned)
    assert np.array_equal(a.snapshots[0], b.snapshots[0])  # same init
    assert not np.array_equal(a.snapshots[-1], b.snapshots[-1])  # different samples
