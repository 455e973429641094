import math

import numpy as np
import pytest

from ccbench.checks import explicit_fisher
from ccbench.core import ConfigurationError
from ccbench.policies import (
    DeterministicMlpPolicy, FisherOperator, GaussianMlpPolicy, ParamLayout, QFunction, RecurrentGaussianPolicy,
    fisher_vector_product, gaussian_log_prob, load_policy, log_prob, mean_kl, recurrent_unroll, save_policy,
)


def small_policy(obs_dim=3, act_dim=2, seed=0):
    return GaussianMlpPolicy(obs_dim, act_dim, hidden_sizes=(5,), hidden_activations=("tanh",), seed=seed)


def test_default_architecture():
    pol = GaussianMlpPolicy(4, 1)
    assert pol.hidden_sizes == (100, 50, 25)
    assert pol.activations == ("tanh", "tanh", "linear", "linear")
    assert pol.num_params == 4 * 100 + 100 + 100 * 50 + 50 + 50 * 25 + 25 + 25 + 1 + 1
    assert np.all(pol.layout.unpack(pol.params)["log_std"] == 0.0)
    assert RecurrentGaussianPolicy(2, 1).hidden_size == 32
    assert DeterministicMlpPolicy(2, 1, -1, 1).hidden_sizes == (400, 300)


def test_pack_unpack_roundtrip():
    pol = small_policy()
    blocks = pol.layout.unpack(pol.params)
    assert np.array_equal(pol.layout.pack(blocks), pol.params)
    with pytest.raises(ValueError):
        ParamLayout([("a", (2,)), ("a", (3,))])


def test_glorot_bounds():
    pol = GaussianMlpPolicy(4, 1, seed=3)
    w = pol.layout.unpack(pol.params)
    assert np.max(np.abs(w["W0"])) <= math.sqrt(6 / 104)
    assert np.all(w["b0"] == 0)


def test_log_prob_standard_normal_at_mode():
    lp = gaussian_log_prob(np.zeros((1, 3)), np.zeros(3), np.zeros((1, 3)))
    assert lp[0] == pytest.approx(-1.5 * math.log(2 * math.pi))


def test_log_prob_mode_and_translation():
    rng = np.random.default_rng(0)
    mean, log_std = rng.normal(size=(4, 2)), rng.normal(size=2)
    at_mode = gaussian_log_prob(mean, log_std, mean)
    other = gaussian_log_prob(mean, log_std, mean + rng.normal(size=(4, 2)))
    assert np.all(at_mode > other)
    a = rng.normal(size=(4, 2))
    np.testing.assert_allclose(gaussian_log_prob(mean + 3.0, log_std, a + 3.0), gaussian_log_prob(mean, log_std, a))


def test_log_prob_rejects_non_finite():
    pol = small_policy()
    with pytest.raises(ValueError):
        log_prob(pol, pol.params, np.zeros((1, 3)), np.array([[np.nan, 0.0]]))
    with pytest.raises(ValueError):
        log_prob(pol, pol.params, np.full((1, 3), np.inf), np.zeros((1, 2)))


def test_mean_kl_examples():
    pol = small_policy(act_dim=2)
    obs = np.random.default_rng(0).normal(size=(10, 3))
    assert mean_kl(pol, pol.params, pol.params, obs) == 0.0
    wide = pol.params.copy()
    sl, _ = pol.layout.slices["log_std"]
    wide[sl] = math.log(2.0)
    assert mean_kl(pol, pol.params, wide, obs) == pytest.approx(2 * (math.log(2) - 3 / 8))
    rng = np.random.default_rng(1)
    for _ in range(20):
        other = pol.params + rng.normal(size=pol.num_params)
        assert mean_kl(pol, pol.params, other, obs) >= 0
    with pytest.raises(ValueError):
        mean_kl(pol, pol.params, pol.params, np.zeros((0, 3)))


def test_fvp_linearity_and_zero():
    pol = small_policy()
    rng = np.random.default_rng(2)
    obs = rng.normal(size=(30, 3))
    F = FisherOperator(pol, pol.params, obs)
    v1, v2 = rng.normal(size=(2, pol.num_params))
    np.testing.assert_allclose(F(v1 + v2), F(v1) + F(v2), atol=1e-8)
    assert np.all(F(np.zeros(pol.num_params)) == 0)
    with pytest.raises(ConfigurationError):
        F(np.zeros(pol.num_params + 1))


def test_fvp_matches_brute_force_fim():
    pol = GaussianMlpPolicy(2, 2, hidden_sizes=(3,), hidden_activations=("tanh",), seed=4)
    rng = np.random.default_rng(3)
    theta = pol.params + 0.1 * rng.normal(size=pol.num_params)
    obs = rng.normal(size=(12, 2))
    F = explicit_fisher(pol, theta, obs)
    for _ in range(10):
        v = rng.normal(size=pol.num_params)
        np.testing.assert_allclose(fisher_vector_product(pol, theta, obs, v, damping=0.0), F @ v, atol=1e-10)
        np.testing.assert_allclose(fisher_vector_product(pol, theta, obs, v), F @ v + 1e-5 * v, atol=1e-10)


def test_fvp_generic_path_matches_closed_form_on_default_policy():
    pol = GaussianMlpPolicy(4, 1, seed=0)
    obs = np.random.default_rng(0).normal(size=(50, 4))
    v = np.random.default_rng(1).normal(size=pol.num_params)
    fast = FisherOperator(pol, pol.params, obs, exact=True)(v)
    slow = FisherOperator(pol, pol.params, obs, exact=False)(v)
    np.testing.assert_allclose(fast, slow, rtol=1e-9, atol=1e-12)


def test_recurrent_fvp_is_symmetric_psd():
    pol = RecurrentGaussianPolicy(2, 1, hidden_size=3, seed=0)
    rng = np.random.default_rng(0)
    seqs = [(rng.normal(size=(5, 2)), rng.normal(size=(5, 1))) for _ in range(3)]
    F = FisherOperator(pol, pol.params, seqs)
    for _ in range(10):
        u, v = rng.normal(size=(2, pol.num_params))
        assert abs(u @ F(v) - v @ F(u)) < 1e-8
        assert v @ F(v) > 0


def test_recurrent_base_case_is_feed_forward():
    pol = RecurrentGaussianPolicy(2, 1, hidden_size=4, seed=1)
    w = pol.layout.unpack(pol.params)
    o = np.array([[0.3, -0.2]])
    a = np.array([[0.5]])
    x = np.concatenate([o, np.zeros((1, 1))], axis=1)
    z = x @ w["Wx"] + w["b"]
    H = 4
    sig = lambda u: 1 / (1 + np.exp(-u))
    c = sig(z[:, :H]) * np.tanh(z[:, 3 * H:])
    h = sig(z[:, 2 * H:3 * H]) * np.tanh(c)
    mean = h @ w["Wout"] + w["bout"]
    expected = gaussian_log_prob(mean, w["log_std"], a)
    np.testing.assert_allclose(recurrent_unroll(pol, pol.params, o, a), expected, rtol=1e-12)
    with pytest.raises(ValueError):
        recurrent_unroll(pol, pol.params, np.zeros((3, 2)), np.zeros((2, 1)))


def test_recurrent_act_matches_unroll():
    pol = RecurrentGaussianPolicy(2, 1, hidden_size=4, seed=2)
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(6, 2))
    state, prev, actions = pol.initial_state(1), np.zeros((1, 1)), []
    for t in range(6):
        a, state = pol.act(obs[t:t + 1], prev, state, [rng])
        actions.append(a[0])
        prev = a
    actions = np.array(actions)
    mean_path = []
    state, prev = pol.initial_state(1), np.zeros((1, 1))
    for t in range(6):
        m, state = pol.act(obs[t:t + 1], prev, state, None, deterministic=True)
        mean_path.append(m[0])
        prev = actions[t:t + 1]
    lp = recurrent_unroll(pol, pol.params, obs, actions)
    w = pol.layout.unpack(pol.params)
    np.testing.assert_allclose(lp, gaussian_log_prob(np.array(mean_path), w["log_std"], actions), rtol=1e-10)


def test_gaussian_sampler_statistics():
    pol = small_policy(obs_dim=2, act_dim=2, seed=5)
    n = 100_000
    obs = np.tile([[0.4, -0.1]], (n, 1))
    rngs = [np.random.default_rng([7, i]) for i in range(n)]
    a, _ = pol.act(obs, None, None, rngs)
    mean = pol.mean_numpy(obs[:1])[0]
    sigma = np.exp(pol.layout.unpack(pol.params)["log_std"])
    assert np.all(np.abs(a.mean(0) - mean) < 4 * sigma / math.sqrt(n))
    assert np.all(np.isfinite(log_prob(pol, pol.params, obs[:100], a[:100])))


def test_deterministic_policy_within_bounds():
    pol = DeterministicMlpPolicy(3, 2, [-2.0, 0.0], [2.0, 1.0], hidden_sizes=(8, 8), seed=0)
    obs = np.random.default_rng(0).normal(scale=50, size=(200, 3))
    a = pol.forward(pol.params * 5, obs)
    assert np.all(a >= [-2.0, 0.0]) and np.all(a <= [2.0, 1.0])
    q = QFunction(3, 2, hidden_sizes=(8,), seed=0)
    assert q.forward(q.params, obs, a).shape == (200,)


def test_rowwise_rollout_path_matches_batched_path():
    pol = GaussianMlpPolicy(4, 1, seed=0)
    obs = np.random.default_rng(0).normal(size=(37, 4))
    a, _ = pol.act(obs, None, None, None, deterministic=True)
    np.testing.assert_allclose(a, pol.mean_numpy(obs), rtol=1e-12, atol=1e-14)
    b, _ = pol.act(obs[:5], None, None, None, deterministic=True)
    assert np.array_equal(a[:5], b)


@pytest.mark.parametrize("make", [
    lambda: small_policy(),
    lambda: RecurrentGaussianPolicy(3, 2, hidden_size=4, seed=1),
    lambda: DeterministicMlpPolicy(3, 1, -1.0, 1.0, hidden_sizes=(4, 4), seed=2),
    lambda: QFunction(3, 1, hidden_sizes=(4,), seed=3),
])
def test_checkpoint_roundtrip(tmp_path, make):
    pol = make()
    pol.params = pol.params + np.random.default_rng(0).normal(size=pol.num_params)
    path = tmp_path / "p.policy"
    save_policy(path, pol, extra={"iteration": 3})
    loaded, header = load_policy(path)
    assert type(loaded) is type(pol) and np.array_equal(loaded.params, pol.params)
    assert header["extra"]["iteration"] == 3


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.policy"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_policy(path)
