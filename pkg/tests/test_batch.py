import math

import numpy as np
import pytest

from ccbench.algos.batch import (
    BatchSample, LinearBaseline, TrustRegionConfig, baseline_features, conjugate_gradient, minimize_reps_dual,
    natural_step, reinforce_gradient, reps_dual_grad, reps_dual_value, reps_weights, rwr_update, rwr_weights,
    surrogate, trpo_step,
)
from ccbench.checks import central_difference
from ccbench.core import ConfigurationError, Trajectory
from ccbench.policies import GaussianMlpPolicy, log_prob, mean_kl


def make_samples(n_traj=4, length=6, obs_dim=2, seed=0, horizon=None):
    rng = np.random.default_rng(seed)
    trajs = [Trajectory(rng.normal(size=(length, obs_dim)), rng.normal(size=(length, 1)), rng.normal(size=length),
                        rng.normal(size=obs_dim)) for _ in range(n_traj)]
    return BatchSample.build(trajs, 0.99, LinearBaseline(), horizon=horizon or length)


def tiny_policy(obs_dim=2, seed=0):
    return GaussianMlpPolicy(obs_dim, 1, hidden_sizes=(4,), hidden_activations=("tanh",), seed=seed)


# ------------------------------------------------------------ baseline


def test_baseline_feature_examples():
    np.testing.assert_array_equal(baseline_features(np.array([2.0]), 0), [2, 4, 0, 0, 0, 1])
    assert baseline_features(np.zeros(4), 3).shape == (12,)
    np.testing.assert_allclose(baseline_features(np.array([1.0, -1.0]), 100)[2:], np.ones(6))
    np.testing.assert_allclose(baseline_features(np.array([1.0, -1.0]), 100)[:2], [1, -1])
    with pytest.raises(ValueError):
        baseline_features(np.zeros(2), -1)


def test_baseline_matches_normal_equations():
    rng = np.random.default_rng(0)
    obs, t, y = rng.normal(size=(200, 3)), rng.integers(0, 500, 200), rng.normal(size=200)
    b = LinearBaseline(reg=1e-5).fit(obs, t, y)
    X = baseline_features(obs, t)
    oracle = np.linalg.solve(X.T @ X + 1e-5 * np.eye(X.shape[1]), X.T @ y)
    np.testing.assert_allclose(b.coeffs, oracle, rtol=1e-8, atol=1e-10)


def test_baseline_reproduces_constant_returns():
    rng = np.random.default_rng(1)
    obs, t = rng.normal(size=(100, 2)), rng.integers(0, 200, 100)
    pred = LinearBaseline().fit(obs, t, np.full(100, 7.0)).predict(obs, t)
    np.testing.assert_allclose(pred, 7.0, atol=1e-4)


def test_unfitted_baseline_predicts_zero():
    assert np.all(LinearBaseline().predict(np.zeros((3, 2)), np.arange(3)) == 0)


def test_normalizer_is_trajectories_times_horizon():
    s = make_samples(n_traj=3, length=5, horizon=500)
    assert s.normalizer == 1500 and s.size == 15


# ------------------------------------------------------------ REINFORCE


def test_zero_advantages_give_zero_gradient():
    s = make_samples()
    pol = tiny_policy()
    g = reinforce_gradient(s.with_advantages(np.zeros(s.size)), pol, pol.params)
    assert np.all(g == 0)


def test_reinforce_gradient_single_step_example():
    traj = Trajectory(np.array([[0.5, -0.5]]), np.array([[0.3]]), np.array([2.0]), np.zeros(2))
    s = BatchSample.build([traj], 0.99, None, horizon=1)
    pol = tiny_policy()
    g = reinforce_gradient(s, pol, pol.params)
    fd = central_difference(lambda th: float(log_prob(pol, th, s.observations, s.actions)[0]), pol.params)
    np.testing.assert_allclose(g, 2.0 * fd, rtol=1e-5, atol=1e-8)


def test_reinforce_gradient_finite_differences():
    s = make_samples(horizon=10)
    pol = tiny_policy(seed=3)
    g = reinforce_gradient(s, pol, pol.params)
    obj = lambda th: float(np.sum(log_prob(pol, th, s.observations, s.actions) * s.advantages) / s.normalizer)
    fd = central_difference(obj, pol.params)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


# ---------------------------------------------------------------- CG / TNPG


def test_cg_identity_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(conjugate_gradient(lambda v: v, b, iters=1), b)


def test_cg_diagonal_and_random_spd():
    np.testing.assert_allclose(conjugate_gradient(lambda v: np.array([2.0, 5.0]) * v, np.array([4.0, 5.0])), [2, 1])
    rng = np.random.default_rng(0)
    M = rng.normal(size=(50, 50))
    A = M @ M.T + 50 * np.eye(50)
    b = rng.normal(size=50)
    x = conjugate_gradient(lambda v: A @ v, b, iters=50, residual_tol=0.0)
    assert np.linalg.norm(A @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_cg_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        conjugate_gradient(lambda v: v * np.nan, np.ones(2))


def test_natural_step_identity_example():
    step, info = natural_step(np.array([3.0, 4.0]), lambda v: v, 0.01)
    np.testing.assert_allclose(step, math.sqrt(0.01 / 25) * np.array([3.0, 4.0]))
    # predicted KL of the quadratic model is step' F step / 2 = delta / 2
    assert 0.5 * step @ step == pytest.approx(0.005)


def test_natural_step_worked_examples():
    step, info = natural_step(np.array([3.0, 4.0]), lambda v: v, 0.5)
    assert info["g_dot_d"] == pytest.approx(25.0) and info["alpha"] == pytest.approx(math.sqrt(0.02))
    np.testing.assert_allclose(step, [0.42426, 0.56569], atol=1e-5)
    step, info = natural_step(np.array([2.0, 1.0]), lambda v: np.array([4.0, 1.0]) * v, 0.5)
    np.testing.assert_allclose(info["direction"], [0.5, 1.0])
    assert info["alpha"] == pytest.approx(math.sqrt(0.25))


def test_natural_step_diagonal_and_zero():
    F = np.array([4.0, 1.0])
    g = np.array([1.0, 1.0])
    step, _ = natural_step(g, lambda v: F * v, 0.02)
    d = g / F
    np.testing.assert_allclose(step, math.sqrt(0.02 / (g @ d)) * d)
    assert 0.5 * step @ (F * step) == pytest.approx(0.01)
    step, info = natural_step(np.zeros(2), lambda v: v, 0.01)
    assert info["skipped"] and np.all(step == 0)


# ------------------------------------------------------------------ TRPO


def test_surrogate_at_old_parameters_is_mean_advantage():
    s = make_samples(horizon=6)
    pol = tiny_policy()
    old = log_prob(pol, pol.params, s.observations, s.actions)
    assert surrogate(pol, pol.params, s, old) == pytest.approx(np.sum(s.advantages) / s.normalizer)


def test_trpo_accepted_step_respects_kl():
    s = make_samples(n_traj=8, length=10)
    pol = tiny_policy(seed=1)
    cfg = TrustRegionConfig(step_size=0.01)
    new, info = trpo_step(s, pol, pol.params, cfg)
    if info["accepted"]:
        assert mean_kl(pol, pol.params, new, s.observations) <= 0.01
        assert info["surrogate_after"] > info["surrogate_before"]
    else:
        assert np.array_equal(new, pol.params)


def test_trpo_zero_advantages_leave_parameters():
    s = make_samples()
    s = s.with_advantages(np.zeros(s.size))
    pol = tiny_policy()
    new, info = trpo_step(s, pol, pol.params, TrustRegionConfig())
    assert np.array_equal(new, pol.params) and not info["accepted"]


def test_trust_region_config_validation():
    with pytest.raises(ConfigurationError):
        TrustRegionConfig(step_size=0)
    with pytest.raises(ConfigurationError):
        TrustRegionConfig(backtrack_ratio=1.0)


# ------------------------------------------------------------------ RWR


def test_rwr_weights_examples():
    np.testing.assert_array_equal(rwr_weights([1.0, 3.0]), [0.0, 2.0])
    a = np.random.default_rng(0).normal(size=10)
    np.testing.assert_allclose(rwr_weights(a + 5.0), rwr_weights(a))
    assert np.all(rwr_weights(a) >= 0)


def test_rwr_moves_mean_toward_favoured_action():
    obs = np.zeros((40, 1))
    actions = np.concatenate([np.full((20, 1), 1.0), np.full((20, 1), -1.0)])
    trajs = [Trajectory(obs[i:i + 1], actions[i:i + 1], np.array([1.0 if i < 20 else 0.0]), np.zeros(1))
             for i in range(40)]
    s = BatchSample.build(trajs, 0.99, None, horizon=1)
    pol = GaussianMlpPolicy(1, 1, hidden_sizes=(3,), hidden_activations=("tanh",), seed=0)
    before = pol.mean_numpy(np.zeros((1, 1)))[0, 0]
    new, _ = rwr_update(s, pol, pol.params)
    assert pol.mean_numpy(np.zeros((1, 1)), new)[0, 0] > before + 0.5


def test_rwr_all_equal_advantages_is_a_no_op():
    s = make_samples()
    s = s.with_advantages(np.full(s.size, 2.5))
    pol = tiny_policy()
    new, info = rwr_update(s, pol, pol.params)
    assert info["skipped"] and np.array_equal(new, pol.params)


# ------------------------------------------------------------------ REPS


def test_reps_dual_zero_errors():
    r, f = np.zeros(5), np.zeros((5, 2))
    assert reps_dual_value(2.0, np.zeros(2), r, f, 0.1) == pytest.approx(0.2)
    r = np.full(5, 3.0)
    assert reps_dual_value(2.0, np.zeros(2), r, f, 0.1) == pytest.approx(0.2 + 3.0)
    with pytest.raises(ValueError):
        reps_dual_value(0.0, np.zeros(2), r, f, 0.1)


def test_reps_dual_gradient_finite_differences():
    rng = np.random.default_rng(0)
    r, f, nu = rng.normal(size=30), rng.normal(size=(30, 3)), rng.normal(size=3) * 0.3
    z = np.concatenate([[0.7], nu])
    fn = lambda z: reps_dual_value(z[0], z[1:], r, f, 0.05)
    fd = central_difference(fn, z)
    d_eta, d_nu = reps_dual_grad(0.7, nu, r, f, 0.05)
    np.testing.assert_allclose(np.concatenate([[d_eta], d_nu]), fd, atol=1e-6)


def test_reps_dual_invariant_to_duplicating_samples():
    rng = np.random.default_rng(1)
    r, f = rng.normal(size=10), rng.normal(size=(10, 2))
    nu = np.array([0.2, -0.1])
    a = reps_dual_value(1.3, nu, r, f, 0.1)
    b = reps_dual_value(1.3, nu, np.tile(r, 2), np.tile(f, (2, 1)), 0.1)
    assert a == pytest.approx(b, rel=1e-12)


def test_reps_weights_positive_and_bandit_concentration():
    rng = np.random.default_rng(2)
    r = np.concatenate([np.ones(50), np.zeros(50)])
    f = np.zeros((100, 1))
    assert np.all(reps_weights(1.0, np.zeros(1), rng.normal(size=5) * 100, np.zeros((5, 1))) > 0)
    loose = minimize_reps_dual(r, f, 1.0)
    tight = minimize_reps_dual(r, f, 0.01)
    share = lambda eta: reps_weights(eta, np.zeros(1), r, f)[:50].sum() / reps_weights(eta, np.zeros(1), r, f).sum()
    assert share(loose[0]) > share(tight[0]) > 0.5
    # an active constraint puts the reweighted sample exactly at KL = epsilon
    w = reps_weights(tight[0], np.zeros(1), r, f)
    q = w / w.mean()
    assert np.mean(q * np.log(q)) == pytest.approx(0.01, rel=0.05)


# ------------------------------------------------------------ algorithms


def _cartpole_reinforce(**kw):
    from ccbench.algos.batch import Reinforce
    from ccbench.tasks import TaskEnv, make_task

    env = TaskEnv(make_task("cartpole"), 50)
    pol = GaussianMlpPolicy(4, 1, hidden_sizes=(4,), hidden_activations=("tanh",), seed=0)
    return Reinforce(env, pol, 50, 0.99, 200, 0, **kw)


def test_reinforce_adam_resumes_exactly():
    a = _cartpole_reinforce(optimizer="adam", learning_rate=1e-2)
    for it in range(2):
        a.iterate(it)
    saved = {k: np.array(v) for k, v in a.state_dict().items()}
    a.iterate(2)
    b = _cartpole_reinforce(optimizer="adam", learning_rate=1e-2)
    b.load_state_dict(saved)
    b.iterate(2)
    assert np.array_equal(a.policy.params, b.policy.params)


def test_reinforce_rejects_unknown_optimizer():
    with pytest.raises(ConfigurationError):
        _cartpole_reinforce(optimizer="rmsprop")


def test_reps_dual_survives_a_sharp_optimum():
    # large, well-separated errors pull eta towards zero
    r = np.concatenate([np.full(5, 1.0), np.full(495, -100.0)])
    eta, nu, info = minimize_reps_dual(r, np.zeros((500, 1)), 1e-3)
    assert eta > 0 and np.isfinite(info["dual"])
