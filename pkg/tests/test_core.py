import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccbench.core import (
    ConfigurationError, EnvSpec, SeededRng, discounted_returns, performance_metric, rollout, rollout_batch,
    sample_iteration,
)
from ccbench.policies import GaussianMlpPolicy
from ccbench.tasks import TaskEnv, make_task

from conftest import ConstantEnv, ConstantPolicy


@pytest.mark.parametrize("rewards,gamma,expected", [
    ([1, 1, 1], 0.5, [1.75, 1.5, 1.0]),
    ([1, 1, 1], 1.0, [3, 2, 1]),
    ([5], 0.3, [5]),
    ([], 0.9, []),
])
def test_discounted_returns_examples(rewards, gamma, expected):
    np.testing.assert_allclose(discounted_returns(rewards, gamma), expected)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), st.floats(0.01, 1.0))
def test_discounted_returns_recursion(rewards, gamma):
    out = discounted_returns(rewards, gamma)
    for t in range(len(rewards) - 1):
        assert out[t] == rewards[t] + gamma * out[t + 1]
    assert out[-1] == rewards[-1]


def test_discount_out_of_range():
    with pytest.raises(ConfigurationError):
        discounted_returns([1.0], 0.0)


def test_performance_metric_examples():
    assert performance_metric([[1, 2], [3]]) == 2.0
    assert performance_metric([[7.5]] * 4) == 7.5
    with pytest.raises(ValueError):
        performance_metric([[], []])


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=30), st.randoms())
def test_performance_metric_partition_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    cut = rnd.randint(0, len(shuffled))
    assert performance_metric([values]) == pytest.approx(performance_metric([shuffled[:cut], shuffled[cut:]]))


def test_env_spec_validation():
    with pytest.raises(ConfigurationError):
        EnvSpec(1, 1, [1.0], [0.0])
    with pytest.raises(ConfigurationError):
        EnvSpec(1, 1, [0.0], [1.0], horizon=0)
    with pytest.raises(ConfigurationError):
        EnvSpec(1, 1, [0.0], [1.0], discount=1.5)


def test_rollout_immediate_termination():
    traj = rollout(ConstantEnv(end=1), ConstantPolicy(), 10, SeededRng(0))
    assert traj.length == 1 and traj.terminated


def test_rollout_zero_horizon():
    traj = rollout(ConstantEnv(), ConstantPolicy(), 0, SeededRng(0))
    assert traj.length == 0


def test_rollout_clips_applied_action_but_stores_sample():
    env = ConstantEnv()
    traj = rollout(env, ConstantPolicy(5.0), 3, SeededRng(0))
    assert np.all(traj.actions == 5.0)
    assert all(np.all(a == 1.0) for a in env.applied)


def test_rollout_stops_at_termination_in_batch():
    env = ConstantEnv(end=4)
    trajs = rollout_batch(env, ConstantPolicy(), 10, [SeededRng(0, i) for i in range(3)])
    assert [t.length for t in trajs] == [4, 4, 4]
    assert len(env.applied) == 4


def test_dimension_mismatch():
    env = TaskEnv(make_task("cartpole"), 10)
    with pytest.raises(ConfigurationError):
        rollout(env, GaussianMlpPolicy(4, 2, seed=0), 10, SeededRng(0))


def test_cartpole_upright_equilibrium_is_preserved():
    task = make_task("cartpole")
    state = task.nominal_state()[None]
    for _ in range(500):
        state, res = task.step(state, np.zeros((1, 1)))
        assert not res.terminated[0]
    assert np.max(np.abs(state)) < 1e-12


def test_seeded_rng_streams():
    a = SeededRng(3, 1, 2).generator().normal(size=5)
    assert np.array_equal(a, SeededRng(3, 1, 2).generator().normal(size=5))
    assert not np.array_equal(a, SeededRng(3, 2, 2).generator().normal(size=5))
    assert not np.array_equal(a, SeededRng(3, 1, 3).generator().normal(size=5))


def test_rollout_deterministic_given_seed():
    env = TaskEnv(make_task("acrobot"), 50)
    pol = GaussianMlpPolicy(4, 1, seed=0)
    t1 = rollout(env, pol, 50, SeededRng(9, 4))
    t2 = rollout(env, pol, 50, SeededRng(9, 4))
    assert np.array_equal(t1.observations, t2.observations) and np.array_equal(t1.actions, t2.actions)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 40))
def test_sample_iteration_independent_of_wave_size(wave):
    env = TaskEnv(make_task("cartpole"), 60)
    pol = GaussianMlpPolicy(4, 1, hidden_sizes=(8,), hidden_activations=("tanh",), seed=1)
    ref = sample_iteration(env, pol, 60, 400, 5, 2, max_wave=1)
    got = sample_iteration(env, pol, 60, 400, 5, 2, max_wave=wave)
    assert len(ref) == len(got)
    assert all(np.array_equal(a.actions, b.actions) for a, b in zip(ref, got))


def test_sample_iteration_budget():
    env = TaskEnv(make_task("acrobot"), 500)  # never terminates
    pol = GaussianMlpPolicy(4, 1, hidden_sizes=(8,), hidden_activations=("tanh",), seed=1)
    assert len(sample_iteration(env, pol, 500, 500, 0, 0)) == 1
    trajs = sample_iteration(env, pol, 500, 1200, 0, 0)
    assert len(trajs) == 3 and sum(t.length for t in trajs) == 1500
