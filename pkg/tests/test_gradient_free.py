import numpy as np
import pytest

from ccbench.algos.gradient_free import (
    CEM, CMAES, CemState, CmaesState, cem_elites, cem_iterate, cmaes_iterate, default_population, minimize_cmaes,
)
from ccbench.core import ConfigurationError
from ccbench.policies import GaussianMlpPolicy
from ccbench.tasks import TaskEnv, make_task


def test_cem_full_elite_fraction_gives_sample_mean():
    rng = np.random.default_rng(0)
    state = CemState(np.zeros(3), np.ones(3), elite_fraction=1.0)
    new, info = cem_iterate(state, lambda X: -np.sum(X**2, axis=1), 50, rng)
    np.testing.assert_allclose(new.mean, info["samples"].mean(axis=0))
    np.testing.assert_allclose(new.var, info["samples"].var(axis=0))


def test_cem_elites_are_invariant_to_positive_scaling():
    r = np.random.default_rng(1).normal(size=30)
    assert np.array_equal(cem_elites(r, 6), cem_elites(3.0 * r + 2.0, 6))
    assert np.array_equal(cem_elites([1.0, 1.0, 0.0], 1), [0])


def test_cem_solves_quadratic():
    rng = np.random.default_rng(2)
    target = rng.normal(size=5)
    state = CemState(np.zeros(5), np.full(5, 4.0))
    for _ in range(50):
        state, _ = cem_iterate(state, lambda X: -np.sum((X - target) ** 2, axis=1), 100, rng)
    assert np.linalg.norm(state.mean - target) < 1e-2


def test_cem_contracts_variance_without_extra_noise():
    rng = np.random.default_rng(3)
    state = CemState(np.zeros(4), np.ones(4))
    new, _ = cem_iterate(state, lambda X: -np.sum(X**2, axis=1), 200, rng)
    assert np.all(new.var < 1.0)
    noisy, _ = cem_iterate(CemState(np.zeros(4), np.ones(4), extra_noise=0.5), lambda X: -np.sum(X**2, axis=1),
                           200, np.random.default_rng(3))
    np.testing.assert_allclose(noisy.var, new.var + 0.5)


def test_cem_excludes_non_finite_returns():
    def f(X):
        out = -np.sum(X**2, axis=1)
        out[::2] = np.nan
        return out

    new, info = cem_iterate(CemState(np.zeros(2), np.ones(2)), f, 20, np.random.default_rng(0))
    assert np.all(info["elite"] % 2 == 1) and np.all(np.isfinite(new.mean))
    with pytest.raises(FloatingPointError):
        cem_iterate(CemState(np.zeros(2), np.ones(2)), lambda X: np.full(len(X), np.inf), 10,
                    np.random.default_rng(0))


def test_cem_validation():
    with pytest.raises(ConfigurationError):
        CemState(np.zeros(2), np.ones(2), elite_fraction=0.0)
    with pytest.raises(ConfigurationError):
        cem_iterate(CemState(np.zeros(2), np.ones(2), elite_fraction=0.1), lambda X: X[:, 0], 5,
                    np.random.default_rng(0))


def test_cmaes_sphere():
    x, f, evals, _ = minimize_cmaes(lambda x: float(x @ x), [3.0, 3.0], 0.5, 300, seed=0)
    assert np.linalg.norm(x) < 1e-3 and evals <= 300


def test_cmaes_rosenbrock():
    rosen = lambda x: float(100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)
    _, f, evals, _ = minimize_cmaes(rosen, [-1.0, 1.0], 0.5, 5000, seed=0, target=1e-4)
    assert f < 1e-3 and evals <= 5000


def test_cmaes_is_rank_based():
    rng_a, rng_b = np.random.default_rng(4), np.random.default_rng(4)
    a = b = CmaesState.initial(np.ones(3), 0.3)
    for _ in range(10):
        a, _ = cmaes_iterate(a, lambda X: -np.sum(X**2, axis=1), 8, rng_a)
        b, _ = cmaes_iterate(b, lambda X: np.exp(-np.sum(X**2, axis=1)) * 7 - 1, 8, rng_b)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.C, b.C)


def test_cmaes_covariance_stays_positive_definite():
    rng = np.random.default_rng(5)
    state = CmaesState.initial(np.zeros(4), 1.0)
    scales = np.array([1.0, 10.0, 100.0, 1000.0])
    for _ in range(100):
        state, _ = cmaes_iterate(state, lambda X: -np.sum((scales * (X - 1)) ** 2, axis=1), 8, rng)
        assert np.linalg.eigvalsh(state.C).min() > 0


def test_cmaes_population_rules():
    assert default_population(1) == 4 and default_population(10) == 10
    with pytest.raises(ConfigurationError):
        CmaesState.initial(np.zeros(2), 1.0, population=3)
    with pytest.raises(ConfigurationError):
        CmaesState.initial(np.zeros(2), 0.0)


def _policy_env(seed=0):
    env = TaskEnv(make_task("cartpole"), 50)
    pol = GaussianMlpPolicy(4, 1, hidden_sizes=(3,), hidden_activations=("tanh",), seed=seed)
    return env, pol


@pytest.mark.parametrize("cls", [CEM, CMAES])
def test_population_algorithms_resume_exactly(cls):
    env, pol = _policy_env()
    a = cls(env, pol, 50, 0.99, 500, 0)
    for it in range(3):
        a.iterate(it)
    saved = {k: np.array(v) for k, v in a.state_dict().items()}
    ref = a.iterate(3)

    env2, pol2 = _policy_env()
    b = cls(env2, pol2, 50, 0.99, 500, 0)
    b.load_state_dict(saved)
    got = b.iterate(3)
    assert ref.returns == got.returns
    assert np.array_equal(a.policy.params, b.policy.params)


def test_cmaes_refuses_huge_policies():
    env = TaskEnv(make_task("cartpole"), 10)
    with pytest.raises(ConfigurationError, match="covariance"):
        CMAES(env, GaussianMlpPolicy(4, 1, hidden_sizes=(100, 100), hidden_activations=("tanh", "tanh")), 10, 0.99, 100, 0)
