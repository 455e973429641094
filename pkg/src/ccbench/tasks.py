"""The five basic control tasks with closed-form dynamics.

Every task integrates its equations of motion with fixed-step RK4 (inner
step ``dt``) and holds the action for ``frame_skip`` inner steps. Step
functions are pure and accept either one state ``(d,)`` or a batch ``(n, d)``;
physical parameters may be scalars or ``(n,)`` arrays.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import ClassVar, Sequence

import numpy as np

from .core import ConfigurationError, EnvSpec, StepResult


@dataclass(frozen=True)
class PhysicsParams:
    dt: float = 0.01
    frame_skip: int = 5
    init_noise: float = 0.01
    force_limit: float = 10.0
    gravity: float = 9.81

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = np.asarray(getattr(self, f.name), dtype=np.float64)
            if f.name == "init_noise":
                if np.any(v < 0):
                    raise ConfigurationError("init_noise must be >= 0")
            elif np.any(v <= 0):
                raise ConfigurationError(f"{f.name} must be strictly positive")
        if int(self.frame_skip) != self.frame_skip or self.frame_skip < 1:
            raise ConfigurationError("frame_skip must be an integer >= 1")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


@dataclass(frozen=True)
class CartPoleParams(PhysicsParams):
    cart_mass: float = 1.0
    pole_mass: float = 1.0
    pole_length: float = 1.0


@dataclass(frozen=True)
class MountainCarParams(PhysicsParams):
    car_mass: float = 1.0
    force_limit: float = 2.0
    valley_width: float = 1.0
    valley_height: float = 1.0


@dataclass(frozen=True)
class AcrobotParams(PhysicsParams):
    frame_skip: int = 2
    gravity: float = 9.8
    force_limit: float = 1.0
    link_mass_1: float = 1.0
    link_mass_2: float = 1.0
    link_length_1: float = 1.0
    link_length_2: float = 1.0
    link_inertia_1: float = 1.0
    link_inertia_2: float = 1.0


@dataclass(frozen=True)
class DoublePendulumParams(PhysicsParams):
    frame_skip: int = 2
    cart_mass: float = 1.0
    link_mass_1: float = 1.0
    link_mass_2: float = 1.0
    link_length_1: float = 1.0
    link_length_2: float = 1.0


def _col(state, i):
    return state[..., i]


def rk4(deriv, state, action, params, dt, steps: int):
    for _ in range(int(steps)):
        k1 = deriv(state, action, params)
        k2 = deriv(state + 0.5 * dt * k1, action, params)
        k3 = deriv(state + 0.5 * dt * k2, action, params)
        k4 = deriv(state + dt * k3, action, params)
        state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return state


def _solve(mass, rhs):
    return np.linalg.solve(mass, rhs[..., None])[..., 0]


class Task:
    """Base class: subclasses provide the dynamics, reward and termination."""

    name: ClassVar[str]
    state_dim: ClassVar[int]
    observation_dim: ClassVar[int]
    action_dim: ClassVar[int] = 1
    positional_indices: ClassVar[tuple[int, ...]]
    sysid_ranges: ClassVar[dict[str, tuple[float, float]]]
    params_type: ClassVar[type] = PhysicsParams

    def __init__(self, params: PhysicsParams | None = None, **overrides):
        params = params if params is not None else self.params_type()
        self.params = params.replace(**overrides) if overrides else params

    def env_spec(self, horizon: int = 500, discount: float = 0.99) -> EnvSpec:
        lim = float(np.max(self.params.force_limit))
        return EnvSpec(
            observation_dim=self.observation_dim,
            action_dim=self.action_dim,
            action_lower=np.full(self.action_dim, -lim),
            action_upper=np.full(self.action_dim, lim),
            horizon=horizon,
            discount=discount,
        )

    def nominal_state(self) -> np.ndarray:
        return np.zeros(self.state_dim)

    def initial_state(self, rng: np.random.Generator, params=None) -> np.ndarray:
        params = params or self.params
        noise = float(params.init_noise)
        state = self.nominal_state()
        if noise > 0:
            state = state + rng.uniform(-noise, noise, size=self.state_dim)
        return state

    def derivatives(self, state, action, params):
        raise NotImplementedError

    def observe(self, state) -> np.ndarray:
        return np.array(state, dtype=np.float64)

    def reward(self, state, action, next_state, params) -> np.ndarray:
        raise NotImplementedError

    def is_terminal(self, next_state, params) -> np.ndarray:
        return np.zeros(np.shape(next_state)[:-1], dtype=bool)

    def integrate(self, state, action, params=None):
        params = params or self.params
        return rk4(self.derivatives, state, action, params, params.dt, params.frame_skip)

    def step(self, state, action, params=None) -> tuple[np.ndarray, StepResult]:
        """One control step from ``state``; termination is judged on the new state."""
        params = params or self.params
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        if not np.all(np.isfinite(action)):
            raise ValueError("non-finite action")
        if action.shape[-1:] != (self.action_dim,):
            raise ConfigurationError(f"action must have trailing dim {self.action_dim}")
        nxt = self.integrate(state, action, params)
        reward = self.reward(state, action, nxt, params)
        done = self.is_terminal(nxt, params)
        return nxt, StepResult(self.observe(nxt), reward, done)

    def energy(self, state, params=None):
        raise NotImplementedError(f"{self.name} does not define a mechanical energy")


# ----------------------------------------------------------------- cart-pole


class CartPoleBalancing(Task):
    """Pole on a cart; state (x, theta, x_dot, theta_dot), theta = 0 upright."""

    name = "cartpole"
    state_dim = 4
    observation_dim = 4
    positional_indices = (0, 1)
    sysid_ranges = {"pole_length": (0.5, 1.5)}
    params_type = CartPoleParams

    def derivatives(self, state, action, p):
        theta, x_dot, theta_dot = _col(state, 1), _col(state, 2), _col(state, 3)
        force = action[..., 0]
        total = p.cart_mass + p.pole_mass
        half = 0.5 * p.pole_length
        sin, cos = np.sin(theta), np.cos(theta)
        temp = (force + p.pole_mass * half * theta_dot**2 * sin) / total
        theta_acc = (p.gravity * sin - cos * temp) / (
            half * (4.0 / 3.0 - p.pole_mass * cos**2 / total)
        )
        x_acc = temp - p.pole_mass * half * theta_acc * cos / total
        return np.stack([x_dot, theta_dot, x_acc, theta_acc], axis=-1)

    def reward(self, state, action, next_state, p):
        theta = _col(next_state, 1)
        return 10.0 - (1.0 - np.cos(theta)) - 1e-5 * np.sum(action**2, axis=-1)

    def is_terminal(self, next_state, p):
        return (np.abs(_col(next_state, 0)) > 2.4) | (np.abs(_col(next_state, 1)) > 0.2)


class CartPoleSwingUp(CartPoleBalancing):
    """Same plant, pole starts hanging down (theta = pi)."""

    name = "cartpole_swingup"

    def nominal_state(self):
        return np.array([0.0, np.pi, 0.0, 0.0])

    def reward(self, state, action, next_state, p):
        r = np.cos(_col(next_state, 1))
        return np.where(self.is_terminal(next_state, p), r - 100.0, r)

    def is_terminal(self, next_state, p):
        return np.abs(_col(next_state, 0)) > 3.0


# -------------------------------------------------------------- mountain car


class MountainCar(Task):
    """Car on the curve y = height(x); the action is a force along the track.

    height(x) = valley_height * (1 - cos(3 x / valley_width)) / 2, so the valley
    floor is at height 0 and the crests at ``valley_height``.
    """

    name = "mountain_car"
    state_dim = 2
    observation_dim = 2
    positional_indices = (0,)
    sysid_ranges = {"valley_width": (0.75, 1.25)}
    params_type = MountainCarParams
    target_height = 0.6

    @staticmethod
    def height(x, p):
        return p.valley_height * 0.5 * (1.0 - np.cos(3.0 * x / p.valley_width))

    @staticmethod
    def _slope(x, p):
        k = 3.0 / p.valley_width
        return p.valley_height * 0.5 * k * np.sin(k * x), p.valley_height * 0.5 * k * k * np.cos(k * x)

    def derivatives(self, state, action, p):
        x, v = _col(state, 0), _col(state, 1)
        hp, hpp = self._slope(x, p)
        stretch = 1.0 + hp**2
        force = action[..., 0]
        acc = (force * np.sqrt(stretch) / p.car_mass - hp * hpp * v**2 - p.gravity * hp) / stretch
        return np.stack([v, acc], axis=-1)

    def reward(self, state, action, next_state, p):
        return -1.0 + self.height(_col(next_state, 0), p)

    def is_terminal(self, next_state, p):
        return self.height(_col(next_state, 0), p) >= self.target_height

    def energy(self, state, p=None):
        p = p or self.params
        x, v = _col(state, 0), _col(state, 1)
        hp, _ = self._slope(x, p)
        return 0.5 * p.car_mass * (1.0 + hp**2) * v**2 + p.car_mass * p.gravity * self.height(x, p)


# ------------------------------------------------------------------- acrobot


class AcrobotSwingUp(Task):
    """Two-link arm actuated at the second joint only.

    State (theta1, theta2, theta1_dot, theta2_dot); theta1 = 0 hangs straight
    down, theta2 is relative to the first link. Link centres of mass sit at
    half the link length.
    """

    name = "acrobot"
    state_dim = 4
    observation_dim = 4
    positional_indices = (0, 1)
    sysid_ranges = {"link_length_1": (0.5, 1.5), "link_length_2": (0.5, 1.5)}
    params_type = AcrobotParams

    @staticmethod
    def _terms(state, p):
        t1, t2, d1, d2 = (_col(state, i) for i in range(4))
        m1, m2 = p.link_mass_1, p.link_mass_2
        l1 = p.link_length_1
        lc1, lc2 = 0.5 * p.link_length_1, 0.5 * p.link_length_2
        i1, i2 = p.link_inertia_1, p.link_inertia_2
        c2 = np.cos(t2)
        a11 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * c2) + i1 + i2
        a12 = m2 * (lc2**2 + l1 * lc2 * c2) + i2
        a22 = m2 * lc2**2 + i2 + 0.0 * c2
        return a11, a12, a22

    def derivatives(self, state, action, p):
        t1, t2, d1, d2 = (_col(state, i) for i in range(4))
        g = p.gravity
        m1, m2 = p.link_mass_1, p.link_mass_2
        l1 = p.link_length_1
        lc1, lc2 = 0.5 * p.link_length_1, 0.5 * p.link_length_2
        a11, a12, a22 = self._terms(state, p)
        s2 = np.sin(t2)
        s12 = np.sin(t1 + t2)
        h = m2 * l1 * lc2 * s2
        f1 = h * (2 * d1 * d2 + d2**2) - (m1 * lc1 + m2 * l1) * g * np.sin(t1) - m2 * lc2 * g * s12
        f2 = -h * d1**2 - m2 * lc2 * g * s12 + action[..., 0]
        det = a11 * a22 - a12 * a12
        acc1 = (a22 * f1 - a12 * f2) / det
        acc2 = (a11 * f2 - a12 * f1) / det
        return np.stack([d1, d2, acc1, acc2], axis=-1)

    @staticmethod
    def tip(state, p):
        t1, t2 = _col(state, 0), _col(state, 1)
        x = p.link_length_1 * np.sin(t1) + p.link_length_2 * np.sin(t1 + t2)
        y = -p.link_length_1 * np.cos(t1) - p.link_length_2 * np.cos(t1 + t2)
        return np.stack([x, y], axis=-1)

    def reward(self, state, action, next_state, p):
        # target: both links fully extended straight up
        tip = self.tip(next_state, p)
        dx = tip[..., 0]
        dy = tip[..., 1] - (p.link_length_1 + p.link_length_2)
        return -np.sqrt(dx**2 + dy**2)

    def energy(self, state, p=None):
        """Kinetic plus potential energy, potential zero when hanging down."""
        p = p or self.params
        t1, t2, d1, d2 = (_col(state, i) for i in range(4))
        a11, a12, a22 = self._terms(state, p)
        kin = 0.5 * (a11 * d1**2 + 2 * a12 * d1 * d2 + a22 * d2**2)
        lc1, lc2 = 0.5 * p.link_length_1, 0.5 * p.link_length_2
        y1 = -lc1 * np.cos(t1)
        y2 = -p.link_length_1 * np.cos(t1) - lc2 * np.cos(t1 + t2)
        low = -p.link_mass_1 * lc1 - p.link_mass_2 * (p.link_length_1 + lc2)
        pot = p.gravity * (p.link_mass_1 * y1 + p.link_mass_2 * y2 - low)
        return kin + pot


# ----------------------------------------------------- double inverted pendulum


class DoubleInvertedPendulum(Task):
    """Two links on a cart with point masses at the link ends.

    State (x, theta1, theta2, x_dot, theta1_dot, theta2_dot); theta1 is the
    first link's angle from upright, theta2 the second joint angle relative
    to the first link. Observations encode both angles by sine and cosine:
    (x, sin t1, cos t1, sin t2, cos t2, x_dot, t1_dot, t2_dot).
    """

    name = "double_pendulum"
    state_dim = 6
    observation_dim = 8
    positional_indices = (0, 1, 2, 3, 4)
    sysid_ranges = {"link_length_1": (0.83, 1.67), "link_length_2": (0.83, 1.67)}
    params_type = DoublePendulumParams

    @staticmethod
    def _mass_matrix(phi1, phi2, p):
        M, m1, m2 = p.cart_mass, p.link_mass_1, p.link_mass_2
        l1, l2 = p.link_length_1, p.link_length_2
        z = 0.0 * phi1
        c1, c2, c12 = np.cos(phi1), np.cos(phi2), np.cos(phi1 - phi2)
        rows = [
            [M + m1 + m2 + z, (m1 + m2) * l1 * c1, m2 * l2 * c2],
            [(m1 + m2) * l1 * c1, (m1 + m2) * l1**2 + z, m2 * l1 * l2 * c12],
            [m2 * l2 * c2, m2 * l1 * l2 * c12, m2 * l2**2 + z],
        ]
        return np.stack([np.stack(np.broadcast_arrays(*r), axis=-1) for r in rows], axis=-2)

    def derivatives(self, state, action, p):
        x_dot, d1, dj = _col(state, 3), _col(state, 4), _col(state, 5)
        phi1 = _col(state, 1)
        phi2 = phi1 + _col(state, 2)
        w1, w2 = d1, d1 + dj
        m1, m2 = p.link_mass_1, p.link_mass_2
        l1, l2, g = p.link_length_1, p.link_length_2, p.gravity
        s1, s2, s12 = np.sin(phi1), np.sin(phi2), np.sin(phi1 - phi2)
        rhs = np.stack(
            np.broadcast_arrays(
                action[..., 0] + (m1 + m2) * l1 * s1 * w1**2 + m2 * l2 * s2 * w2**2,
                l1 * ((m1 + m2) * g * s1 - m2 * l2 * s12 * w2**2),
                m2 * l2 * (g * s2 + l1 * s12 * w1**2),
            ),
            axis=-1,
        )
        acc = _solve(self._mass_matrix(phi1, phi2, p), rhs)
        return np.stack([x_dot, d1, dj, acc[..., 0], acc[..., 1], acc[..., 2] - acc[..., 1]], axis=-1)

    def observe(self, state):
        state = np.asarray(state, dtype=np.float64)
        t1, t2 = _col(state, 1), _col(state, 2)
        return np.stack(
            [_col(state, 0), np.sin(t1), np.cos(t1), np.sin(t2), np.cos(t2),
             _col(state, 3), _col(state, 4), _col(state, 5)],
            axis=-1,
        )

    @staticmethod
    def tip(state, p):
        """Tip coordinates relative to the pivot on the cart (x offset by cart x)."""
        phi1 = _col(state, 1)
        phi2 = phi1 + _col(state, 2)
        x = _col(state, 0) + p.link_length_1 * np.sin(phi1) + p.link_length_2 * np.sin(phi2)
        y = p.link_length_1 * np.cos(phi1) + p.link_length_2 * np.cos(phi2)
        return x, y

    def reward(self, state, action, next_state, p):
        x_tip, y_tip = self.tip(next_state, p)
        return (
            10.0
            - 0.01 * x_tip**2
            - (y_tip - 2.0) ** 2
            - 1e-3 * _col(next_state, 4) ** 2
            - 5e-3 * _col(next_state, 5) ** 2
        )

    def is_terminal(self, next_state, p):
        return self.tip(next_state, p)[1] <= 1.0

    def energy(self, state, p=None):
        p = p or self.params
        phi1 = _col(state, 1)
        phi2 = phi1 + _col(state, 2)
        q_dot = np.stack([_col(state, 3), _col(state, 4), _col(state, 4) + _col(state, 5)], axis=-1)
        mass = self._mass_matrix(phi1, phi2, p)
        kin = 0.5 * np.einsum("...i,...ij,...j->...", q_dot, mass, q_dot)
        y1 = p.link_length_1 * np.cos(phi1)
        y2 = y1 + p.link_length_2 * np.cos(phi2)
        low = -p.link_mass_1 * p.link_length_1 - p.link_mass_2 * (p.link_length_1 + p.link_length_2)
        pot = p.gravity * (p.link_mass_1 * y1 + p.link_mass_2 * y2 - low)
        return kin + pot


TASKS: dict[str, type[Task]] = {
    cls.name: cls
    for cls in (CartPoleBalancing, CartPoleSwingUp, MountainCar, AcrobotSwingUp, DoubleInvertedPendulum)
}


def make_task(name: str, **overrides) -> Task:
    try:
        cls = TASKS[name]
    except KeyError:
        raise ConfigurationError(f"unknown task {name!r}; valid ids: {sorted(TASKS)}") from None
    return cls(**overrides)


class TaskEnv:
    """Stateful batched environment around a pure :class:`Task`."""

    def __init__(self, task: Task, horizon: int = 500, discount: float = 0.99):
        self.task = task
        self.spec = task.env_spec(horizon, discount)
        self.params = task.params
        self.state: np.ndarray | None = None

    @property
    def unwrapped(self) -> "TaskEnv":
        return self

    def set_params(self, params) -> None:
        self.params = params

    def reset(self, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        self.state = np.stack([self.task.initial_state(r, self.params) for r in rngs])
        return self.task.observe(self.state)

    def step(self, actions: np.ndarray) -> StepResult:
        if self.state is None:
            raise RuntimeError("step() before reset()")
        nxt, res = self.task.step(self.state, actions, self.params)
        self.state = nxt
        return res


# Convenience pure step functions (single or batched states).

_DEFAULTS = {name: cls() for name, cls in TASKS.items()}


def cartpole_balance_step(state, action, params=None):
    return _DEFAULTS["cartpole"].step(state, action, params)


def cartpole_swingup_step(state, action, params=None):
    return _DEFAULTS["cartpole_swingup"].step(state, action, params)


def mountain_car_step(state, action, params=None):
    return _DEFAULTS["mountain_car"].step(state, action, params)


def acrobot_step(state, action, params=None):
    return _DEFAULTS["acrobot"].step(state, action, params)


def double_pendulum_step(state, action, params=None):
    return _DEFAULTS["double_pendulum"].step(state, action, params)
