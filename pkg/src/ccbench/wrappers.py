"""Partially observable variants as wrappers over any batched task env."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConfigurationError, EnvSpec, StepResult
from .tasks import PhysicsParams


@dataclass(frozen=True)
class LimitedSensorSpec:
    kept_indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.kept_indices)
        if not idx:
            raise ConfigurationError("limited sensors need at least one kept index")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ConfigurationError("kept_indices must be strictly increasing")
        object.__setattr__(self, "kept_indices", idx)


@dataclass(frozen=True)
class NoiseDelaySpec:
    noise_sigma: float = 0.1
    delay_frames: int = 3

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if int(self.delay_frames) != self.delay_frames or self.delay_frames < 0:
            raise ConfigurationError("delay_frames must be a non-negative integer")


@dataclass(frozen=True)
class SysIdSpec:
    ranges: dict

    def __post_init__(self):
        for name, (lo, hi) in self.ranges.items():
            if not 0 < lo <= hi:
                raise ConfigurationError(f"invalid range for {name}: ({lo}, {hi})")


def limited_sensor_observe(full_obs: np.ndarray, spec: LimitedSensorSpec) -> np.ndarray:
    full_obs = np.asarray(full_obs)
    dim = full_obs.shape[-1]
    if spec.kept_indices[0] < 0 or spec.kept_indices[-1] >= dim:
        raise ConfigurationError(f"kept index out of range for observation dim {dim}")
    return full_obs[..., list(spec.kept_indices)]


class Wrapper:
    def __init__(self, env):
        self.env = env
        self.spec: EnvSpec = env.spec

    @property
    def unwrapped(self):
        return self.env.unwrapped

    @property
    def task(self):
        return self.unwrapped.task

    def reset(self, rngs):
        return self.env.reset(rngs)

    def step(self, actions):
        return self.env.step(actions)


class LimitedSensors(Wrapper):
    """Observations restricted to positional coordinates."""

    def __init__(self, env, spec: LimitedSensorSpec | None = None):
        super().__init__(env)
        if spec is None:
            spec = LimitedSensorSpec(env.unwrapped.task.positional_indices)
        if spec.kept_indices[-1] >= env.spec.observation_dim:
            raise ConfigurationError("kept index out of range")
        self.sensor = spec
        self.spec = dataclasses.replace(env.spec, observation_dim=len(spec.kept_indices))

    def reset(self, rngs):
        return limited_sensor_observe(self.env.reset(rngs), self.sensor)

    def step(self, actions):
        res = self.env.step(actions)
        return StepResult(limited_sensor_observe(res.observation, self.sensor), res.reward, res.terminated)


class NoisyDelayed(Wrapper):
    """Gaussian observation noise plus a FIFO delay on actions.

    The action submitted at step t reaches the inner env at step t + delay;
    the first ``delay`` steps apply the zero action.
    """

    def __init__(self, env, spec: NoiseDelaySpec | None = None):
        super().__init__(env)
        self.noise = spec or NoiseDelaySpec()
        self.queue: list[np.ndarray] = []
        self._rngs: Sequence[np.random.Generator] = ()

    def _noisy(self, obs):
        sigma = self.noise.noise_sigma
        if sigma == 0:
            return obs
        eps = np.stack([g.standard_normal(obs.shape[-1]) for g in self._rngs])
        return obs + sigma * eps

    def reset(self, rngs):
        obs = self.env.reset(rngs)
        self._rngs = rngs
        fill = np.zeros((len(rngs), self.spec.action_dim))
        self.queue = [fill.copy() for _ in range(self.noise.delay_frames)]
        return self._noisy(obs)

    def step(self, actions):
        actions = np.asarray(actions, dtype=np.float64)
        if self.queue:
            self.queue.append(actions.copy())
            applied = self.queue.pop(0)
        else:
            applied = actions
        res = self.env.step(applied)
        return StepResult(self._noisy(res.observation), res.reward, res.terminated)


def sysid_draw(spec: SysIdSpec, base: PhysicsParams, rngs: Sequence[np.random.Generator]) -> PhysicsParams:
    """Per-episode parameters: ``base * u`` with ``u ~ Uniform(low, high)``.

    Returns params whose randomized fields are ``(n,)`` arrays, one entry per
    generator. Each generator draws its factors in sorted field-name order.
    """
    names = sorted(spec.ranges)
    factors = np.array([[g.uniform(*spec.ranges[k]) for k in names] for g in rngs]).reshape(len(rngs), len(names))
    values = {k: np.asarray(getattr(base, k)) * factors[:, i] for i, k in enumerate(names)}
    return dataclasses.replace(base, **values)


def sysid_reset(spec: SysIdSpec, env, rng: np.random.Generator):
    """Single-episode form: draw parameters, reset, return both."""
    wrapped = SystemIdentification(env, spec)
    obs = wrapped.reset([rng])
    return wrapped.current_params, obs[0]


class SystemIdentification(Wrapper):
    """Physical parameters redrawn at every reset and held for the episode.

    The drawn values are not exposed in the observation.
    """

    def __init__(self, env, spec: SysIdSpec | None = None):
        super().__init__(env)
        base_env = env.unwrapped
        self.sysid = spec or SysIdSpec(dict(base_env.task.sysid_ranges))
        self.base_params = base_env.task.params
        self.current_params = self.base_params
        for name in self.sysid.ranges:
            if not hasattr(self.base_params, name):
                raise ConfigurationError(f"{type(self.base_params).__name__} has no field {name!r}")

    def reset(self, rngs):
        self.current_params = sysid_draw(self.sysid, self.base_params, rngs)
        self.env.unwrapped.set_params(self.current_params)
        return self.env.reset(rngs)


WRAPPERS = {"limited_sensors": LimitedSensors, "noisy_delayed": NoisyDelayed, "sysid": SystemIdentification}


def apply_wrappers(env, names: Sequence[str], options: dict | None = None):
    """Apply wrappers by id, innermost first."""
    options = options or {}
    for name in names:
        if name not in WRAPPERS:
            raise ConfigurationError(f"unknown wrapper {name!r}; valid ids: {sorted(WRAPPERS)}")
        if name == "noisy_delayed":
            env = NoisyDelayed(env, NoiseDelaySpec(
                float(options.get("noise_sigma", 0.1)), int(options.get("delay_frames", 3))))
        else:
            env = WRAPPERS[name](env)
    return env
