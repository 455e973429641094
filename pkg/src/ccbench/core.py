"""Environment abstraction, trajectory collection and return computation.

Environments are batched: ``reset`` receives one generator per parallel
episode and ``step`` advances all of them at once. A batch of size one is an
ordinary single environment. Each episode draws only from its own generator,
so a trajectory does not depend on which other episodes share its batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised for inconsistent dimensions, ids or parameters."""


@dataclass(frozen=True)
class EnvSpec:
    observation_dim: int
    action_dim: int
    action_lower: np.ndarray
    action_upper: np.ndarray
    horizon: int = 500
    discount: float = 0.99

    def __post_init__(self):
        lo = np.asarray(self.action_lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.action_upper, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "action_lower", lo)
        object.__setattr__(self, "action_upper", hi)
        if self.observation_dim < 1 or self.action_dim < 1:
            raise ConfigurationError("observation_dim and action_dim must be positive")
        if lo.shape != (self.action_dim,) or hi.shape != (self.action_dim,):
            raise ConfigurationError("action bounds must have length action_dim")
        if not np.all(lo < hi):
            raise ConfigurationError("action_lower must be < action_upper")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigurationError("discount must lie in (0, 1]")

    def clip(self, action: np.ndarray) -> np.ndarray:
        return np.clip(action, self.action_lower, self.action_upper)


@dataclass
class StepResult:
    """Outcome of one control step; fields are batched arrays for batched envs."""

    observation: np.ndarray
    reward: np.ndarray | float
    terminated: np.ndarray | bool


@dataclass
class Trajectory:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    final_observation: np.ndarray
    terminated: bool = False

    def __post_init__(self):
        n = len(self.rewards)
        if len(self.observations) != n or len(self.actions) != n:
            raise ValueError("observations, actions and rewards must have equal length")

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def next_observations(self) -> np.ndarray:
        if self.length == 0:
            return self.observations.copy()
        return np.concatenate([self.observations[1:], self.final_observation[None]], axis=0)

    def undiscounted_return(self) -> float:
        return float(np.sum(self.rewards))


@dataclass(frozen=True)
class SeededRng:
    """Counter-style seeding: every (seed, iteration, stream_id) names an
    independent stream, so the draw sequence of a trajectory depends only on
    its own index and not on how sampling is scheduled."""

    seed: int
    stream_id: int = 0
    iteration: int = 0

    def _sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=int(self.seed) & (2**64 - 1),
            spawn_key=(int(self.iteration), int(self.stream_id)),
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._sequence()))

    def generators(self, n: int) -> list[np.random.Generator]:
        """``n`` independent child generators of this stream."""
        return [np.random.Generator(np.random.PCG64(s)) for s in self._sequence().spawn(n)]


class Env(Protocol):
    spec: EnvSpec

    def reset(self, rngs: Sequence[np.random.Generator]) -> np.ndarray: ...

    def step(self, actions: np.ndarray) -> StepResult: ...


class Policy(Protocol):
    observation_dim: int
    action_dim: int

    def initial_state(self, n: int): ...

    def act(self, obs, prev_actions, state, rngs, params=None, deterministic=False): ...


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """``out[t] = rewards[t] + gamma * out[t + 1]``."""
    if not 0.0 < gamma <= 1.0:
        raise ConfigurationError("gamma must lie in (0, 1]")
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def performance_metric(records: Sequence[Sequence[float]]) -> float:
    """Mean undiscounted episode return pooled over all iterations."""
    total = 0.0
    count = 0
    for returns in records:
        for r in returns:
            total += float(r)
            count += 1
    if count == 0:
        raise ValueError("performance_metric needs at least one trajectory")
    return total / count


def _check_dims(env: Env, policy) -> None:
    if policy.action_dim != env.spec.action_dim:
        raise ConfigurationError(
            f"policy action_dim {policy.action_dim} != env action_dim {env.spec.action_dim}"
        )
    if policy.observation_dim != env.spec.observation_dim:
        raise ConfigurationError(
            f"policy observation_dim {policy.observation_dim} != env observation_dim "
            f"{env.spec.observation_dim}"
        )


def rollout_batch(
    env: Env,
    policy,
    horizon: int,
    rngs: Sequence[SeededRng],
    params=None,
    deterministic: bool = False,
) -> list[Trajectory]:
    """Run one episode per element of ``rngs`` in lockstep.

    ``params`` may hold one parameter vector per episode (shape ``(n, P)``),
    which is how population methods evaluate many candidates at once.
    Actions are clipped to the env bounds before being applied; the
    trajectory stores the unclipped sample.
    """
    _check_dims(env, policy)
    n = len(rngs)
    spec = env.spec
    streams = [r.generators(2) for r in rngs]
    env_rngs = [s[0] for s in streams]
    pol_rngs = [s[1] for s in streams]
    obs = env.reset(env_rngs)
    obs_buf = np.zeros((horizon, n, spec.observation_dim))
    act_buf = np.zeros((horizon, n, spec.action_dim))
    rew_buf = np.zeros((horizon, n))
    lengths = np.zeros(n, dtype=int)
    final_obs = obs.copy()
    terminated = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    state = policy.initial_state(n)
    prev = np.zeros((n, spec.action_dim))
    for t in range(horizon):
        action, state = policy.act(obs, prev, state, pol_rngs, params=params, deterministic=deterministic)
        if action.shape != (n, spec.action_dim):
            raise ConfigurationError(f"policy produced actions of shape {action.shape}")
        res = env.step(spec.clip(action))
        obs_buf[t] = obs
        act_buf[t] = action
        rew_buf[t] = np.where(alive, res.reward, 0.0)
        lengths += alive
        done = alive & np.asarray(res.terminated, dtype=bool)
        final_obs[alive] = res.observation[alive]
        terminated |= done
        alive &= ~done
        obs = res.observation
        prev = action
        if not alive.any():
            break
    return [
        Trajectory(
            observations=obs_buf[: lengths[i], i].copy(),
            actions=act_buf[: lengths[i], i].copy(),
            rewards=rew_buf[: lengths[i], i].copy(),
            final_observation=final_obs[i].copy(),
            terminated=bool(terminated[i]),
        )
        for i in range(n)
    ]


def rollout(env: Env, policy, horizon: int, rng: SeededRng, deterministic: bool = False) -> Trajectory:
    """Single episode, stopping at the first termination or at ``horizon``."""
    return rollout_batch(env, policy, horizon, [rng], deterministic=deterministic)[0]


def sample_iteration(
    env: Env,
    policy,
    horizon: int,
    step_budget: int,
    seed: int,
    iteration: int,
    max_wave: int = 2000,
) -> list[Trajectory]:
    """Collect whole trajectories until ``step_budget`` steps are consumed.

    Trajectory ``j`` always uses stream ``(seed, iteration, j)`` and is kept
    iff the trajectories before it used fewer than ``step_budget`` steps, so
    the result equals serial collection regardless of wave sizes. The last
    kept trajectory may overshoot the budget.
    """
    if step_budget < 1:
        raise ConfigurationError("step_budget must be positive")
    kept: list[Trajectory] = []
    used = 0
    next_id = 0
    mean_len = float(horizon)
    while used < step_budget:
        remaining = step_budget - used
        wave = int(min(max_wave, max(1, math.ceil(remaining / max(mean_len, 1.0)))))
        rngs = [SeededRng(seed, next_id + k, iteration) for k in range(wave)]
        batch = rollout_batch(env, policy, horizon, rngs)
        next_id += wave
        lens = [t.length for t in batch]
        mean_len = max(1.0, float(np.mean(lens)))
        for traj in batch:
            if used >= step_budget:
                break
            kept.append(traj)
            used += max(traj.length, 1)
        if horizon == 0:
            break
    return kept
