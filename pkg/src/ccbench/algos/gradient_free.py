"""Cross-entropy method and CMA-ES over a flat parameter vector.

Both optimizers see the problem only through ``evaluate``, which maps an
``(n, P)`` array of candidates to ``n`` returns (higher is better).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from ..core import ConfigurationError, SeededRng, rollout_batch
from .batch import IterationResult

log = logging.getLogger(__name__)


def _evaluate(evaluate, samples) -> np.ndarray:
    values = np.asarray(evaluate(samples), dtype=np.float64).reshape(-1)
    if values.shape != (len(samples),):
        raise ValueError(f"evaluate returned {values.shape}, expected ({len(samples)},)")
    return values


# --------------------------------------------------------------------- CEM


@dataclass(frozen=True)
class CemState:
    mean: np.ndarray
    var: np.ndarray
    extra_noise: float = 0.0
    elite_fraction: float = 0.2

    def __post_init__(self):
        if not 0 < self.elite_fraction <= 1:
            raise ConfigurationError("elite_fraction must lie in (0, 1]")
        if np.any(np.asarray(self.var) < 0) or self.extra_noise < 0:
            raise ConfigurationError("variances must be non-negative")


def cem_elites(returns, n_elite: int) -> np.ndarray:
    """Indices of the ``n_elite`` best finite returns (stable for ties)."""
    returns = np.asarray(returns, dtype=np.float64)
    finite = np.flatnonzero(np.isfinite(returns))
    order = finite[np.argsort(-returns[finite], kind="stable")]
    return order[:n_elite]


def cem_iterate(state: CemState, evaluate, population: int, rng: np.random.Generator):
    """One generation: sample, evaluate, refit on the elite set.

    Returns ``(new_state, info)``. The new variance is the elite variance plus
    ``state.extra_noise``.
    """
    if population < 2:
        raise ConfigurationError("CEM population must be at least 2")
    n_elite = int(population * state.elite_fraction + 1e-9)
    if n_elite < 1:
        raise ConfigurationError("population * elite_fraction must be >= 1")
    mean = np.asarray(state.mean, dtype=np.float64)
    std = np.sqrt(np.asarray(state.var, dtype=np.float64))
    samples = mean + std * rng.standard_normal((population, mean.size))
    returns = _evaluate(evaluate, samples)
    finite = np.isfinite(returns)
    if not finite.any():
        raise FloatingPointError("every CEM candidate returned a non-finite value")
    if not finite.all():
        log.warning("CEM: %d non-finite evaluations excluded", int((~finite).sum()))
    elite = cem_elites(returns, min(n_elite, int(finite.sum())))
    chosen = samples[elite]
    new = replace(state, mean=chosen.mean(axis=0), var=chosen.var(axis=0) + state.extra_noise)
    return new, {"samples": samples, "returns": returns, "elite": elite}


# ------------------------------------------------------------------ CMA-ES


@dataclass
class CmaesState:
    """Full-covariance CMA-ES state with the canonical default constants."""

    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    weights: np.ndarray
    B: np.ndarray
    D: np.ndarray
    generation: int = 0
    evaluations: int = 0
    eigen_generation: int = 0

    @classmethod
    def initial(cls, mean, sigma: float, population: int | None = None) -> "CmaesState":
        mean = np.array(mean, dtype=np.float64).reshape(-1)
        n = mean.size
        if sigma <= 0:
            raise ConfigurationError("initial sigma must be positive")
        lam = population or default_population(n)
        if lam < 4:
            raise ConfigurationError("CMA-ES population must be at least 4")
        mu = lam // 2
        w = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
        return cls(mean=mean, sigma=float(sigma), C=np.eye(n), p_sigma=np.zeros(n), p_c=np.zeros(n),
                   weights=w / w.sum(), B=np.eye(n), D=np.ones(n))

    @property
    def dim(self) -> int:
        return self.mean.size


def default_population(n: int) -> int:
    return 4 + int(3 * math.log(n))


def _constants(n: int, weights: np.ndarray):
    mu_eff = 1.0 / np.sum(weights**2)
    c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
    d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma
    c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
    c_1 = 2 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1 - c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    return mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n


def _repair(C: np.ndarray, floor: float = 1e-20):
    C = 0.5 * (C + C.T)
    D2, B = np.linalg.eigh(C)
    repaired = bool(D2.min() <= floor * max(D2.max(), 1.0))
    if repaired:
        log.warning("CMA-ES covariance lost positive definiteness; eigenvalues floored")
        D2 = np.maximum(D2, floor * max(D2.max(), 1.0))
        C = (B * D2) @ B.T
    return C, B, np.sqrt(D2), repaired


def cmaes_iterate(state: CmaesState, evaluate, population: int, rng: np.random.Generator):
    """One generation of (mu/mu_w, lambda)-CMA-ES maximising ``evaluate``.

    Returns ``(new_state, info)``. Non-finite returns rank last.
    """
    lam = int(population)
    if lam < 4:
        raise ConfigurationError("CMA-ES population must be at least 4")
    mu = lam // 2
    if len(state.weights) != mu:
        w = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
        state = replace(state, weights=w / w.sum())
    n = state.dim
    mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n = _constants(n, state.weights)

    z = rng.standard_normal((lam, n))
    y = (z * state.D) @ state.B.T
    x = state.mean + state.sigma * y
    returns = _evaluate(evaluate, x)
    ranked = np.where(np.isfinite(returns), returns, -np.inf)
    order = np.argsort(-ranked, kind="stable")[:mu]

    y_w = state.weights @ y[order]
    mean = state.mean + state.sigma * y_w
    inv_sqrt_C = (state.B / state.D) @ state.B.T
    p_sigma = (1 - c_sigma) * state.p_sigma + math.sqrt(c_sigma * (2 - c_sigma) * mu_eff) * (inv_sqrt_C @ y_w)
    gen = state.generation + 1
    norm_ps = float(np.linalg.norm(p_sigma))
    h_sigma = norm_ps / math.sqrt(1 - (1 - c_sigma) ** (2 * gen)) < (1.4 + 2 / (n + 1)) * chi_n
    p_c = (1 - c_c) * state.p_c + h_sigma * math.sqrt(c_c * (2 - c_c) * mu_eff) * y_w
    y_sel = y[order]
    rank_mu = (y_sel.T * state.weights) @ y_sel
    delta_h = (1 - h_sigma) * c_c * (2 - c_c)
    C = ((1 - c_1 - c_mu) * state.C + c_1 * (np.outer(p_c, p_c) + delta_h * state.C) + c_mu * rank_mu)
    sigma = state.sigma * math.exp((c_sigma / d_sigma) * (norm_ps / chi_n - 1))

    B, D, eig_gen, repaired = state.B, state.D, state.eigen_generation, False
    # lazy eigendecomposition, as in the reference implementation
    if gen - eig_gen > lam / (c_1 + c_mu) / n / 10:
        C, B, D, repaired = _repair(C)
        eig_gen = gen
    new = replace(state, mean=mean, sigma=sigma, C=C, p_sigma=p_sigma, p_c=p_c, B=B, D=D,
                  generation=gen, evaluations=state.evaluations + lam, eigen_generation=eig_gen)
    return new, {"samples": x, "returns": returns, "order": order, "repaired": repaired}


def minimize_cmaes(f, x0, sigma0: float, max_evals: int, seed: int = 0, target: float | None = None,
                   population: int | None = None):
    """Convenience driver: minimise ``f(x)`` (scalar per point)."""
    rng = np.random.default_rng(seed)
    state = CmaesState.initial(x0, sigma0, population)
    lam = population or default_population(state.dim)
    best_x, best_f = state.mean.copy(), float(f(state.mean))
    evals = 1
    while evals + lam <= max_evals:
        state, info = cmaes_iterate(state, lambda X: -np.array([f(x) for x in X]), lam, rng)
        evals += lam
        i = int(np.argmax(info["returns"]))
        if -info["returns"][i] < best_f:
            best_x, best_f = info["samples"][i].copy(), float(-info["returns"][i])
        if target is not None and best_f < target:
            break
    return best_x, best_f, evals, state


# --------------------------------------------------------- policy wrappers


class _PopulationAlgorithm:
    """Evaluates each candidate by one deterministic rollout."""

    name = "population"

    def __init__(self, env, policy, horizon: int, discount: float, step_budget: int, seed: int,
                 population: int | None = None):
        self.env = env
        self.policy = policy
        self.horizon = horizon
        self.discount = discount
        self.step_budget = step_budget
        self.seed = seed
        self.population = population or max(2, step_budget // max(horizon, 1))
        self._last = None
        self._iteration = 0

    def _evaluate(self, candidates):
        rngs = [SeededRng(self.seed, i, self._iteration) for i in range(len(candidates))]
        self._last = rollout_batch(self.env, self.policy, self.horizon, rngs, params=candidates,
                                   deterministic=True)
        return [t.undiscounted_return() for t in self._last]

    def _rng(self, iteration):
        # stream id 2**31 is reserved for the optimizer's own draws
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(iteration, 2**31)))

    def _result(self) -> IterationResult:
        trajs = self._last
        return IterationResult(returns=[t.undiscounted_return() for t in trajs],
                               steps=int(sum(t.length for t in trajs)))


class CEM(_PopulationAlgorithm):
    name = "cem"

    def __init__(self, *args, elite_fraction: float = 0.2, init_std: float = 1.0, extra_noise: float = 0.1,
                 n_iterations: int = 100, **kw):
        super().__init__(*args, **kw)
        self.extra_noise = extra_noise
        self.n_iterations = n_iterations
        p = self.policy.num_params
        self.state = CemState(self.policy.params.copy(), np.full(p, init_std**2), extra_noise, elite_fraction)
        if int(self.population * elite_fraction + 1e-9) < 1:
            raise ConfigurationError("population * elite_fraction must be >= 1")

    def iterate(self, iteration: int) -> IterationResult:
        self._iteration = iteration
        decay = max(0.0, 1.0 - (iteration + 1) / max(self.n_iterations, 1))
        state = replace(self.state, extra_noise=self.extra_noise * decay)
        self.state, info = cem_iterate(state, self._evaluate, self.population, self._rng(iteration))
        self.policy.params = self.state.mean.copy()
        return self._result()

    def state_dict(self) -> dict:
        return {"mean": self.state.mean.copy(), "var": self.state.var.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.state = replace(self.state, mean=np.array(state["mean"]), var=np.array(state["var"]))
        self.policy.params = self.state.mean.copy()


class CMAES(_PopulationAlgorithm):
    name = "cmaes"
    max_params = 8192

    def __init__(self, *args, init_std: float = 1.0, **kw):
        super().__init__(*args, **kw)
        p = self.policy.num_params
        if p > self.max_params:
            raise ConfigurationError(
                f"CMA-ES stores a {p}x{p} covariance ({8 * p * p / 2**30:.1f} GiB); "
                f"at most {self.max_params} parameters are supported")
        self.population = max(default_population(p), self.population)
        self.state = CmaesState.initial(self.policy.params, init_std, self.population)

    def iterate(self, iteration: int) -> IterationResult:
        self._iteration = iteration
        self.state, info = cmaes_iterate(self.state, self._evaluate, self.population, self._rng(iteration))
        self.policy.params = self.state.mean.copy()
        return self._result()

    def state_dict(self) -> dict:
        s = self.state
        return {"mean": s.mean, "sigma": np.array(s.sigma), "C": s.C, "p_sigma": s.p_sigma, "p_c": s.p_c,
                "B": s.B, "D": s.D, "generation": np.array(s.generation),
                "evaluations": np.array(s.evaluations), "eigen_generation": np.array(s.eigen_generation)}

    def load_state_dict(self, state: dict) -> None:
        self.state = replace(
            self.state, mean=np.array(state["mean"]), sigma=float(state["sigma"]), C=np.array(state["C"]),
            p_sigma=np.array(state["p_sigma"]), p_c=np.array(state["p_c"]), B=np.array(state["B"]),
            D=np.array(state["D"]), generation=int(state["generation"]),
            evaluations=int(state["evaluations"]), eigen_generation=int(state["eigen_generation"]))
        self.policy.params = self.state.mean.copy()
