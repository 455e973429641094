"""Deep deterministic policy gradient with a replay pool and soft targets."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..core import ConfigurationError, SeededRng
from ..policies import DeterministicMlpPolicy, QFunction
from .batch import IterationResult
from .optim import Adam

log = logging.getLogger(__name__)

REWARD_SCALE = 0.1


def scale_reward(r):
    """Reward as stored in the replay pool; metrics keep the raw value."""
    return REWARD_SCALE * np.asarray(r, dtype=np.float64) if np.ndim(r) else REWARD_SCALE * float(r)


class ReplayPool:
    """Fixed-capacity ring buffer of (s, a, r, s', terminal)."""

    def __init__(self, capacity: int, observation_dim: int, action_dim: int):
        if capacity < 1:
            raise ConfigurationError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.observations = np.zeros((self.capacity, observation_dim))
        self.actions = np.zeros((self.capacity, action_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_observations = np.zeros((self.capacity, observation_dim))
        self.terminals = np.zeros(self.capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, terminal) -> None:
        i = self.cursor
        self.observations[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_observations[i] = next_obs
        self.terminals[i] = terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < batch_size:
            raise ValueError(f"pool holds {self.size} transitions, batch needs {batch_size}")
        return rng.integers(0, self.size, size=batch_size)

    def batch(self, idx):
        return (self.observations[idx], self.actions[idx], self.rewards[idx],
                self.next_observations[idx], self.terminals[idx])


class OrnsteinUhlenbeck:
    """Mean-reverting exploration noise, x <- x + theta (mu - x) + sigma N(0, 1)."""

    def __init__(self, action_dim: int, theta: float = 0.15, sigma: float = 0.2, mu: float = 0.0):
        self.theta = theta
        self.sigma = sigma
        self.mu = mu
        self.state = np.full(action_dim, mu, dtype=np.float64)

    def reset(self) -> None:
        self.state[:] = self.mu

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.sigma == 0 and self.theta == 0:
            return self.state.copy()
        self.state = self.state + self.theta * (self.mu - self.state) + self.sigma * rng.standard_normal(self.state.shape)
        return self.state.copy()


def soft_update(target, live, tau: float) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    live = np.asarray(live, dtype=np.float64)
    if target.shape != live.shape:
        raise ConfigurationError(f"target shape {target.shape} != live shape {live.shape}")
    if not 0 <= tau <= 1:
        raise ConfigurationError("tau must lie in [0, 1]")
    return tau * live + (1 - tau) * target


def _weight_mask(critic: QFunction) -> np.ndarray:
    mask = np.zeros(critic.num_params)
    for name, (sl, shape) in critic.layout.slices.items():
        if len(shape) == 2:
            mask[sl] = 1.0
    return mask


def critic_targets(rewards, next_obs, terminals, actor, actor_target, critic, critic_target, discount):
    """y = r + gamma Q'(s', mu'(s')), and y = r on terminal transitions."""
    q_next = critic.forward(critic_target, next_obs, actor.forward(actor_target, next_obs))
    return np.asarray(rewards) + discount * np.where(terminals, 0.0, q_next)


def critic_loss_and_grad(critic, phi, obs, actions, targets, weight_decay: float = 0.0, mask=None):
    """L = mean((y - Q)^2) + weight_decay/2 * ||W||^2 over weight matrices."""
    ph = ad.variable(phi)
    q = critic.forward(ph, obs, actions)
    err = q - targets
    loss = ad.mean(err * err)
    if weight_decay:
        w = ph * (mask if mask is not None else _weight_mask(critic))
        loss = loss + (0.5 * weight_decay) * ad.tsum(w * w)
    return float(loss.value), ad.grad(loss, ph).value


def actor_objective_and_grad(actor, critic, theta, phi, obs):
    """J = mean Q(s, mu_theta(s)) and dJ/dtheta via the chain through the action."""
    th = ad.variable(theta)
    q = critic.forward(phi, obs, actor.forward(th, obs))
    obj = ad.mean(q)
    return float(obj.value), ad.grad(obj, th).value


def critic_update(pool, critic, phi, targets_fn, batch_size, rng, optimizer: Adam, weight_decay=0.0, mask=None):
    """One optimizer step on the Bellman regression loss.

    ``targets_fn(rewards, next_obs, terminals)`` supplies y. Returns
    ``(phi, loss)`` or ``(phi, None)`` when the pool is too small.
    """
    if len(pool) < batch_size:
        log.info("critic update skipped: pool underfilled")
        return phi, None
    obs, act, rew, nxt, term = pool.batch(pool.sample_indices(batch_size, rng))
    y = targets_fn(rew, nxt, term)
    loss, g = critic_loss_and_grad(critic, phi, obs, act, y, weight_decay, mask)
    return optimizer.step(phi, g), loss


def actor_update(pool, actor, critic, theta, phi, batch_size, rng, optimizer: Adam):
    if len(pool) < batch_size:
        log.info("actor update skipped: pool underfilled")
        return theta
    obs = pool.observations[pool.sample_indices(batch_size, rng)]
    _, g = actor_objective_and_grad(actor, critic, theta, phi, obs)
    return optimizer.step(theta, -g)


@dataclass
class DDPGConfig:
    capacity: int = 1_000_000
    batch_size: int = 64
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    weight_decay: float = 1e-2
    tau: float = 1e-3
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    warmup: int = 10_000
    reward_scale: float = REWARD_SCALE


class DDPG:
    """Online learner: one environment step per critic, actor and target update.

    An "iteration" is ``step_budget`` environment steps; the reported returns
    are the raw returns of the episodes that finished during it.
    """

    name = "ddpg"

    def __init__(self, env, policy, horizon: int, discount: float, step_budget: int, seed: int,
                 critic: QFunction | None = None, config: DDPGConfig | None = None, **overrides):
        self.env = env
        spec = env.spec
        if policy is None or not isinstance(policy, DeterministicMlpPolicy):
            policy = DeterministicMlpPolicy(spec.observation_dim, spec.action_dim, spec.action_lower,
                                            spec.action_upper, seed=seed)
        self.policy = policy
        self.critic = critic or QFunction(spec.observation_dim, spec.action_dim, seed=seed + 1)
        self.horizon = horizon
        self.discount = discount
        self.step_budget = step_budget
        self.seed = seed
        cfg = config or DDPGConfig()
        for k, v in overrides.items():
            if not hasattr(cfg, k):
                raise ConfigurationError(f"unknown DDPG option {k!r}")
            setattr(cfg, k, type(getattr(cfg, k))(v))
        self.config = cfg
        self.phi = self.critic.params.copy()
        self.theta_target = self.policy.params.copy()
        self.phi_target = self.phi.copy()
        self.pool = ReplayPool(min(cfg.capacity, 10**7), spec.observation_dim, spec.action_dim)
        self.noise = OrnsteinUhlenbeck(spec.action_dim, cfg.ou_theta, cfg.ou_sigma)
        self.actor_opt = Adam(self.policy.num_params, cfg.actor_lr)
        self.critic_opt = Adam(self.critic.num_params, cfg.critic_lr)
        self._mask = _weight_mask(self.critic)
        self._rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, 2**31 + 1)))
        self._episode = 0
        self._obs = None
        self._t = 0
        self._ret = 0.0
        self.total_steps = 0

    def _start_episode(self):
        env_rng = SeededRng(self.seed, self._episode, 0).generators(1)[0]
        self._episode += 1
        self._obs = self.env.reset([env_rng])[0]
        self.noise.reset()
        self._t = 0
        self._ret = 0.0

    def train_step(self):
        cfg = self.config
        if len(self.pool) < cfg.batch_size or self.total_steps < cfg.warmup:
            return
        self.phi, _ = critic_update(
            self.pool, self.critic, self.phi,
            lambda r, s2, d: critic_targets(r, s2, d, self.policy, self.theta_target, self.critic,
                                            self.phi_target, self.discount),
            cfg.batch_size, self._rng, self.critic_opt, cfg.weight_decay, self._mask)
        self.policy.params = actor_update(self.pool, self.policy, self.critic, self.policy.params, self.phi,
                                          cfg.batch_size, self._rng, self.actor_opt)
        self.theta_target = soft_update(self.theta_target, self.policy.params, cfg.tau)
        self.phi_target = soft_update(self.phi_target, self.phi, cfg.tau)

    def iterate(self, iteration: int) -> IterationResult:
        spec = self.env.spec
        returns = []
        for _ in range(self.step_budget):
            if self._obs is None:
                self._start_episode()
            a = self.policy.forward(self.policy.params, self._obs[None])[0] + self.noise.sample(self._rng)
            a = spec.clip(a)
            res = self.env.step(a[None])
            nxt, r, term = res.observation[0], float(res.reward[0]), bool(res.terminated[0])
            self.pool.add(self._obs, a, self.config.reward_scale * r, nxt, term)
            self._ret += r
            self._t += 1
            self.total_steps += 1
            self._obs = nxt
            self.train_step()
            if term or self._t >= self.horizon:
                returns.append(self._ret)
                self._obs = None
        return IterationResult(returns=returns, steps=self.step_budget)

    def state_dict(self) -> dict:
        return {"params": self.policy.params.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.policy.params = np.array(state["params"], dtype=np.float64)
