"""On-policy batch algorithms and the shared linear baseline."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .. import autodiff as ad
from ..core import ConfigurationError, Trajectory, discounted_returns, sample_iteration
from ..policies import FisherOperator, log_prob, mean_kl
from .optim import Adam

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ samples


def baseline_features(obs, t) -> np.ndarray:
    """concat(s, s*s, 0.01t, (0.01t)^2, (0.01t)^3, 1); batched over rows."""
    obs = np.asarray(obs, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("time index must be >= 0")
    tt = 0.01 * t
    if obs.ndim == 1:
        return np.concatenate([obs, obs * obs, [tt, tt**2, tt**3, 1.0]])
    tt = np.broadcast_to(tt, obs.shape[:1])[:, None]
    return np.concatenate([obs, obs * obs, tt, tt**2, tt**3, np.ones_like(tt)], axis=1)


@dataclass
class LinearBaseline:
    coeffs: np.ndarray | None = None
    reg: float = 1e-5

    def fit(self, observations, time_index, returns) -> "LinearBaseline":
        X = baseline_features(observations, time_index)
        y = np.asarray(returns, dtype=np.float64)
        A = X.T @ X
        rhs = X.T @ y
        reg = self.reg
        for _ in range(5):
            coeffs = np.linalg.solve(A + reg * np.eye(A.shape[0]), rhs)
            if np.all(np.isfinite(coeffs)):
                break
            reg *= 10
        self.coeffs = coeffs
        return self

    def predict(self, observations, time_index) -> np.ndarray:
        if self.coeffs is None:
            return np.zeros(len(observations))
        return baseline_features(observations, time_index) @ self.coeffs


@dataclass
class BatchSample:
    """Flattened per-timestep view of a batch of trajectories."""

    trajectories: list[Trajectory]
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    time_index: np.ndarray
    returns: np.ndarray
    baselines: np.ndarray
    advantages: np.ndarray
    lengths: np.ndarray
    normalizer: float

    @classmethod
    def build(cls, trajectories, discount: float, baseline: LinearBaseline | None = None,
              horizon: int | None = None) -> "BatchSample":
        """``normalizer`` is N * horizon (N trajectories), or the step count
        when no horizon is given."""
        trajs = [t for t in trajectories if t.length > 0]
        if not trajs:
            raise ValueError("empty batch")
        obs = np.concatenate([t.observations for t in trajs])
        time_index = np.concatenate([np.arange(t.length) for t in trajs])
        returns = np.concatenate([discounted_returns(t.rewards, discount) for t in trajs])
        if baseline is not None:
            baseline.fit(obs, time_index, returns)
            b = baseline.predict(obs, time_index)
        else:
            b = np.zeros_like(returns)
        return cls(
            trajectories=trajs,
            observations=obs,
            actions=np.concatenate([t.actions for t in trajs]),
            rewards=np.concatenate([t.rewards for t in trajs]),
            next_observations=np.concatenate([t.next_observations for t in trajs]),
            time_index=time_index,
            returns=returns,
            baselines=b,
            advantages=returns - b,
            lengths=np.array([t.length for t in trajs]),
            normalizer=float(len(trajs) * horizon if horizon else len(time_index)),
        )

    @property
    def size(self) -> int:
        return len(self.rewards)

    def with_advantages(self, advantages) -> "BatchSample":
        out = BatchSample(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.advantages = np.asarray(advantages, dtype=np.float64)
        return out


def fit_baseline(samples: BatchSample, reg: float = 1e-5) -> LinearBaseline:
    return LinearBaseline(reg=reg).fit(samples.observations, samples.time_index, samples.returns)


# ---------------------------------------------------------- gradient pieces


def _weighted_logprob_grad(policy, theta, samples, weights, normalizer=None):
    """Value and gradient of sum(weights * log pi) / normalizer (default: M)."""
    th = ad.variable(theta)
    lp = log_prob(policy, th, samples, samples.actions)
    obj = ad.tsum(lp * weights) / float(normalizer or samples.size)
    return float(obj.value), ad.grad(obj, th).value


def reinforce_gradient(samples: BatchSample, policy, theta) -> np.ndarray:
    """(1/NT) sum_i sum_t grad log pi(a_t|s_t) (R_t - b_t)."""
    if samples.size == 0:
        raise ValueError("empty batch")
    return _weighted_logprob_grad(policy, theta, samples, samples.advantages, samples.normalizer)[1]


def surrogate(policy, theta, samples, old_logp) -> ad.Tensor:
    """(1/NT) sum(pi_theta / pi_old * A); equals (1/NT) sum(A) at theta = old."""
    lp = log_prob(policy, theta, samples, samples.actions)
    if isinstance(lp, ad.Tensor):
        return ad.tsum(ad.exp(lp - old_logp) * samples.advantages) / samples.normalizer
    return float(np.sum(np.exp(lp - old_logp) * samples.advantages) / samples.normalizer)


def conjugate_gradient(apply_A, b, iters: int = 10, residual_tol: float = 1e-10) -> np.ndarray:
    """Approximately solve A x = b for a symmetric positive-definite operator."""
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    for _ in range(iters):
        if rr <= residual_tol:
            break
        Ap = apply_A(p)
        pAp = p @ Ap
        if not np.isfinite(pAp):
            raise FloatingPointError("non-finite value in conjugate gradient")
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        if not np.isfinite(rr_new):
            raise FloatingPointError("non-finite value in conjugate gradient")
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


@dataclass
class TrustRegionConfig:
    step_size: float = 0.05
    cg_iters: int = 10
    backtrack_ratio: float = 0.8
    max_backtracks: int = 15
    damping: float = 0.1

    def __post_init__(self):
        if self.step_size <= 0:
            raise ConfigurationError("step_size (delta_KL) must be positive")
        if not 0 < self.backtrack_ratio < 1:
            raise ConfigurationError("backtrack_ratio must lie in (0, 1)")


def natural_step(g, fvp, step_size: float, cg_iters: int = 10):
    """Scaled natural-gradient step alpha * d with d = CG(I, g).

    alpha = sqrt(step_size / (g . d)). Returns ``(step, info)``; the step is
    zero when g . d is not positive.
    """
    g = np.asarray(g, dtype=np.float64)
    d = conjugate_gradient(fvp, g, cg_iters)
    gd = float(g @ d)
    if not gd > 0 or not np.isfinite(gd):
        log.warning("natural gradient step skipped: g.d = %g", gd)
        return np.zeros_like(g), {"skipped": True, "g_dot_d": gd, "direction": d, "alpha": 0.0}
    alpha = math.sqrt(step_size / gd)
    return alpha * d, {"skipped": False, "g_dot_d": gd, "direction": d, "alpha": alpha}


def tnpg_step(samples, policy, theta, step_size, cg_iters: int = 10, damping: float = 0.1):
    g = reinforce_gradient(samples, policy, theta)
    fvp = FisherOperator(policy, theta, samples, damping)
    step, info = natural_step(g, fvp, step_size, cg_iters)
    info["fvp"] = fvp
    return np.asarray(theta) + step, info


def trpo_step(samples, policy, theta, config: TrustRegionConfig):
    """Natural-gradient proposal followed by a backtracking line search.

    A candidate is accepted when the surrogate strictly improves and the
    sample mean KL stays within ``config.step_size``; otherwise theta is
    returned unchanged.
    """
    theta = np.asarray(theta, dtype=np.float64)
    with ad.no_grad():
        old_logp = log_prob(policy, theta, samples, samples.actions)
    base = surrogate(policy, theta, samples, old_logp)
    g = reinforce_gradient(samples, policy, theta)
    fvp = FisherOperator(policy, theta, samples, config.damping)
    step, info = natural_step(g, fvp, config.step_size, config.cg_iters)
    info.update(accepted=False, backtracks=0, surrogate_before=base, fvp=fvp)
    if info["skipped"]:
        return theta, info
    for k in range(config.max_backtracks + 1):
        cand = theta + (config.backtrack_ratio**k) * step
        with ad.no_grad():
            value = surrogate(policy, cand, samples, old_logp)
            kl = mean_kl(policy, theta, cand, samples)
        if value > base and kl <= config.step_size:
            info.update(accepted=True, backtracks=k, surrogate_after=value, kl=kl)
            return cand, info
    log.info("TRPO line search exhausted; keeping parameters")
    return theta, info


# ------------------------------------------------------------------ RWR/REPS


def rwr_weights(advantages) -> np.ndarray:
    a = np.asarray(advantages, dtype=np.float64)
    return a - a.min()


def _weighted_ml(policy, theta, samples, weights, iters: int):
    """Maximise mean(weights * log pi) with a bounded L-BFGS budget."""
    weights = np.asarray(weights, dtype=np.float64)

    def neg(x):
        v, g = _weighted_logprob_grad(policy, x, samples, weights)
        return -v, -g

    res = optimize.minimize(neg, np.asarray(theta, dtype=np.float64), jac=True, method="L-BFGS-B",
                            options={"maxiter": iters})
    return res.x


def rwr_objective(samples, policy, theta) -> float:
    """(1/NT) sum log pi(a|s) * rho(A), the quantity RWR maximises."""
    return _weighted_logprob_grad(policy, theta, samples, rwr_weights(samples.advantages), samples.normalizer)[0]


def rwr_update(samples, policy, theta, inner_iters: int = 10):
    w = rwr_weights(samples.advantages)
    if not np.any(w > 0):
        log.warning("RWR weights are all zero; parameters unchanged")
        return np.asarray(theta, dtype=np.float64), {"skipped": True}
    w = w / w.mean()  # argmax is invariant to positive scaling
    return _weighted_ml(policy, theta, samples, w, inner_iters), {"skipped": False}


def reps_features(obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    return np.concatenate([obs, obs * obs, np.ones(obs.shape[:-1] + (1,))], axis=-1)


def reps_bellman_errors(nu, rewards, feature_diff) -> np.ndarray:
    return np.asarray(rewards) + np.asarray(feature_diff) @ np.asarray(nu)


def reps_dual_value(eta, nu, rewards, feature_diff, step_size) -> float:
    """eta * eps + eta * log(mean(exp(delta / eta))), overflow-safe."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    delta = reps_bellman_errors(nu, rewards, feature_diff)
    m = delta.max()
    return float(eta * step_size + m + eta * np.log(np.mean(np.exp((delta - m) / eta))))


def reps_dual_grad(eta, nu, rewards, feature_diff, step_size):
    """(dg/deta, dg/dnu)."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    delta = reps_bellman_errors(nu, rewards, feature_diff)
    m = delta.max()
    w = np.exp((delta - m) / eta)
    sw = w.sum()
    d_eta = step_size + m / eta + np.log(sw / len(w)) - (w @ delta) / (eta * sw)
    d_nu = (w @ np.asarray(feature_diff)) / sw
    return float(d_eta), d_nu


def reps_weights(eta, nu, rewards, feature_diff) -> np.ndarray:
    """exp(delta_i / eta), rescaled by exp(-max delta / eta)."""
    delta = reps_bellman_errors(nu, rewards, feature_diff)
    return np.exp((delta - delta.max()) / eta)


LOG_ETA_MIN, LOG_ETA_MAX = -30.0, 30.0


def minimize_reps_dual(rewards, feature_diff, step_size, max_iters: int = 500, tol: float = 1e-5):
    """Minimise the dual over (log eta, nu); returns (eta, nu, info)."""
    k = np.asarray(feature_diff).shape[1]

    def fun(z):
        eta = math.exp(z[0])
        nu = z[1:]
        v = reps_dual_value(eta, nu, rewards, feature_diff, step_size)
        d_eta, d_nu = reps_dual_grad(eta, nu, rewards, feature_diff, step_size)
        return v, np.concatenate([[d_eta * eta], d_nu])

    z0 = np.zeros(k + 1)
    # bounding log eta keeps eta a positive, representable float
    bounds = [(LOG_ETA_MIN, LOG_ETA_MAX)] + [(None, None)] * k
    res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": max_iters, "gtol": tol})
    if not res.success:
        log.info("REPS dual did not converge: %s", res.message)
    return math.exp(res.x[0]), res.x[1:], {"converged": bool(res.success), "dual": float(res.fun)}


def reps_update(samples, policy, theta, step_size, inner_iters: int = 50):
    feats = reps_features(samples.next_observations) - reps_features(samples.observations)
    eta, nu, info = minimize_reps_dual(samples.rewards, feats, step_size)
    w = reps_weights(eta, nu, samples.rewards, feats)
    w = w / w.mean()
    info.update(eta=eta)
    return _weighted_ml(policy, theta, samples, w, inner_iters), info


# ---------------------------------------------------------------- algorithms


@dataclass
class IterationResult:
    returns: list[float]
    steps: int
    mean_kl: float | None = None
    info: dict = field(default_factory=dict)


class BatchAlgorithm:
    """Sample a batch under the current policy, then update it."""

    name = "batch"
    logs_kl = False
    uses_baseline = True

    def __init__(self, env, policy, horizon: int, discount: float, step_budget: int, seed: int):
        self.env = env
        self.policy = policy
        self.horizon = horizon
        self.discount = discount
        self.step_budget = step_budget
        self.seed = seed

    def update(self, samples: BatchSample) -> tuple[np.ndarray, dict]:
        raise NotImplementedError

    def iterate(self, iteration: int) -> IterationResult:
        trajs = sample_iteration(self.env, self.policy, self.horizon, self.step_budget, self.seed, iteration)
        samples = BatchSample.build(trajs, self.discount, LinearBaseline() if self.uses_baseline else None,
                                    self.horizon)
        old = self.policy.params.copy()
        new, info = self.update(samples)
        kl = None
        if self.logs_kl:
            with ad.no_grad():
                kl = mean_kl(self.policy, old, new, samples)
        self.policy.params = np.asarray(new, dtype=np.float64)
        return IterationResult(
            returns=[t.undiscounted_return() for t in trajs],
            steps=int(sum(t.length for t in trajs)),
            mean_kl=kl,
            info={k: v for k, v in info.items() if isinstance(v, (int, float, bool))},
        )

    def state_dict(self) -> dict:
        return {"params": self.policy.params.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.policy.params = np.array(state["params"], dtype=np.float64)


class Reinforce(BatchAlgorithm):
    """Vanilla policy gradient; ``optimizer`` is "sgd" (plain ascent) or "adam"."""

    name = "reinforce"
    logs_kl = True

    def __init__(self, *args, learning_rate: float = 5e-3, optimizer: str = "sgd", **kw):
        super().__init__(*args, **kw)
        if optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {optimizer!r}; valid: ['adam', 'sgd']")
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self._adam = Adam(self.policy.num_params, learning_rate) if optimizer == "adam" else None

    def update(self, samples):
        g = reinforce_gradient(samples, self.policy, self.policy.params)
        info = {"grad_norm": float(np.linalg.norm(g))}
        if self._adam is not None:
            return self._adam.step(self.policy.params, -g), info
        return self.policy.params + self.learning_rate * g, info

    def state_dict(self) -> dict:
        state = super().state_dict()
        if self._adam is not None:
            state.update({f"adam_{k}": v for k, v in self._adam.state_dict().items()})
        return state

    def load_state_dict(self, state: dict) -> None:
        super().load_state_dict(state)
        if self._adam is not None:
            self._adam.load_state_dict({k[5:]: v for k, v in state.items() if k.startswith("adam_")})


class TNPG(BatchAlgorithm):
    name = "tnpg"
    logs_kl = True

    def __init__(self, *args, step_size: float = 0.05, cg_iters: int = 10, damping: float = 0.1, **kw):
        super().__init__(*args, **kw)
        self.step_size = step_size
        self.cg_iters = cg_iters
        self.damping = damping

    def update(self, samples):
        new, info = tnpg_step(samples, self.policy, self.policy.params, self.step_size, self.cg_iters, self.damping)
        return new, info


class TRPO(BatchAlgorithm):
    name = "trpo"
    logs_kl = True

    def __init__(self, *args, step_size: float = 0.05, cg_iters: int = 10, backtrack_ratio: float = 0.8,
                 max_backtracks: int = 15, damping: float = 0.1, **kw):
        super().__init__(*args, **kw)
        self.config = TrustRegionConfig(step_size, cg_iters, backtrack_ratio, max_backtracks, damping)

    def update(self, samples):
        return trpo_step(samples, self.policy, self.policy.params, self.config)


class RWR(BatchAlgorithm):
    name = "rwr"

    def __init__(self, *args, inner_iters: int = 10, **kw):
        super().__init__(*args, **kw)
        self.inner_iters = inner_iters

    def update(self, samples):
        return rwr_update(samples, self.policy, self.policy.params, self.inner_iters)


class REPS(BatchAlgorithm):
    name = "reps"
    uses_baseline = False

    def __init__(self, *args, step_size: float = 0.01, inner_iters: int = 50, **kw):
        super().__init__(*args, **kw)
        self.step_size = step_size
        self.inner_iters = inner_iters

    def update(self, samples):
        return reps_update(samples, self.policy, self.policy.params, self.step_size, self.inner_iters)


class RandomPolicy(BatchAlgorithm):
    """Freshly initialised policy that is never updated (the Random column)."""

    name = "random"
    uses_baseline = False

    def update(self, samples):
        return self.policy.params, {}
