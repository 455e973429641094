import numpy as np
import pytest

from ccbench.core import EnvSpec, StepResult


class ConstantEnv:
    """One-dimensional toy env: reward 1 per step, optional termination at ``end``."""

    def __init__(self, end=None, horizon=10):
        self.spec = EnvSpec(1, 1, [-1.0], [1.0], horizon=horizon)
        self.end = end
        self.t = 0
        self.applied = []

    @property
    def unwrapped(self):
        return self

    def reset(self, rngs):
        self.t = 0
        self.n = len(rngs)
        return np.array([[g.normal()] for g in rngs])

    def step(self, actions):
        self.applied.append(np.array(actions, copy=True))
        self.t += 1
        done = self.end is not None and self.t >= self.end
        return StepResult(np.full((self.n, 1), float(self.t)), np.ones(self.n), np.full(self.n, done))


class ConstantPolicy:
    observation_dim = 1
    action_dim = 1

    def __init__(self, value=5.0):
        self.value = value

    def initial_state(self, n):
        return None

    def act(self, obs, prev, state, rngs, params=None, deterministic=False):
        return np.full((len(obs), 1), self.value), None


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
