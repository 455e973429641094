"""Running experiments: construction from a config, CSV logging, resume."""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algos.batch import REPS, RWR, TNPG, TRPO, RandomPolicy, Reinforce
from .algos.ddpg import DDPG
from .algos.gradient_free import CEM, CMAES
from .config import ExperimentConfig, dump_config
from .core import ConfigurationError
from .policies import GaussianMlpPolicy, RecurrentGaussianPolicy, save_policy
from .stats import best_index, selection_score
from .tasks import TaskEnv, make_task
from .wrappers import apply_wrappers

log = logging.getLogger(__name__)

ALGORITHMS = {
    "random": RandomPolicy,
    "reinforce": Reinforce,
    "tnpg": TNPG,
    "rwr": RWR,
    "reps": REPS,
    "trpo": TRPO,
    "cem": CEM,
    "cmaes": CMAES,
    "ddpg": DDPG,
}
DISPLAY_NAMES = {
    "random": "Random", "reinforce": "REINFORCE", "tnpg": "TNPG", "rwr": "RWR", "reps": "REPS",
    "trpo": "TRPO", "cem": "CEM", "cmaes": "CMA-ES", "ddpg": "DDPG",
}
CSV_HEADER = "seed,iteration,episodes,mean_return,std_return,min_return,max_return,mean_kl,steps,wall_ms"
CSV_FIELDS = CSV_HEADER.split(",")
# DDPG is absent: its replay pool is not persisted
_RESUMABLE = {"random", "reinforce", "tnpg", "rwr", "reps", "trpo", "cem", "cmaes"}


def make_env(config: ExperimentConfig):
    task = make_task(config.task, **config.physics)
    env = TaskEnv(task, config.horizon, config.discount)
    return apply_wrappers(env, config.wrappers, config.wrapper_options)


def make_policy(config: ExperimentConfig, env, seed: int):
    kind = config.policy
    if kind == "auto":
        kind = "gaussian_lstm" if config.wrappers else "gaussian_mlp"
    cls = RecurrentGaussianPolicy if kind == "gaussian_lstm" else GaussianMlpPolicy
    return cls(env.spec.observation_dim, env.spec.action_dim, seed=seed)


def make_algorithm(config: ExperimentConfig, seed: int):
    try:
        cls = ALGORITHMS[config.algorithm]
    except KeyError:
        raise ConfigurationError(
            f"unknown algorithm {config.algorithm!r}; valid ids: {sorted(ALGORITHMS)}") from None
    env = make_env(config)
    hyper = dict(config.hyperparameters)
    if cls is CEM:
        hyper.setdefault("n_iterations", config.num_iterations)
    policy = None if cls is DDPG else make_policy(config, env, seed)
    try:
        return cls(env, policy, config.horizon, config.discount, config.sim_steps_per_iter, seed, **hyper)
    except TypeError as exc:
        raise ConfigurationError(f"bad hyperparameters for {config.algorithm}: {exc}") from None


# ------------------------------------------------------------------ CSV rows


def _fmt(x) -> str:
    return "" if x is None else f"{float(x):.6g}"


def format_row(seed: int, iteration: int, returns, mean_kl, steps: int, wall_ms: float) -> str:
    r = np.asarray(returns, dtype=np.float64)
    stats = (r.mean(), r.std(), r.min(), r.max()) if r.size else (None,) * 4
    cells = [str(seed), str(iteration), str(r.size), *(_fmt(v) for v in stats), _fmt(mean_kl), str(int(steps)),
             str(int(round(wall_ms)))]
    return ",".join(cells)


def read_progress(path) -> list[dict]:
    """Complete rows of a progress CSV (a torn final line is ignored)."""
    path = Path(path)
    if not path.exists():
        return []
    text = path.read_text()
    lines = text.splitlines(keepends=True)
    if lines and not lines[-1].endswith("\n"):
        lines = lines[:-1]
    if not lines:
        return []
    if lines[0].rstrip("\r\n") != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    rows = []
    for rec in csv.DictReader(io.StringIO("".join(lines))):
        row = {}
        for k in CSV_FIELDS:
            v = rec[k]
            if k in ("seed", "iteration", "episodes", "steps", "wall_ms"):
                row[k] = int(v)
            else:
                row[k] = float(v) if v != "" else None
        rows.append(row)
    return rows


def performance_from_rows(rows) -> float:
    """Mean undiscounted return pooled over every episode of every iteration."""
    n = sum(r["episodes"] for r in rows)
    if n == 0:
        raise ValueError("no completed episodes")
    return sum(r["episodes"] * r["mean_return"] for r in rows if r["episodes"]) / n


# ------------------------------------------------------------------ running


def run_dir(out, config: ExperimentConfig) -> Path:
    return Path(out) / config.task_id / config.algorithm


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _save_state(path: Path, state: dict, completed: int) -> None:
    buf = io.BytesIO()
    np.savez(buf, completed=np.array(completed), **{f"algo_{k}": np.asarray(v) for k, v in state.items()})
    _atomic_write(path, buf.getvalue())


def _load_state(path: Path):
    if not path.exists():
        return 0, None
    with np.load(path) as z:
        completed = int(z["completed"])
        state = {k[5:]: z[k] for k in z.files if k.startswith("algo_")}
    return completed, state


@dataclass
class SeedRun:
    seed: int
    rows: list[dict]
    directory: Path


def run_seed(config: ExperimentConfig, seed: int, directory) -> SeedRun:
    """Run (or resume) one seed, appending one CSV row per iteration.

    Finished iterations are never rerun or rewritten. An algorithm without
    resumable state (DDPG keeps its replay pool in memory) restarts the seed
    from scratch when its CSV is incomplete.
    """
    d = Path(directory) / f"seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    csv_path, state_path = d / "progress.csv", d / "state.npz"
    algo = make_algorithm(config, seed)
    rows = read_progress(csv_path)
    completed, state = _load_state(state_path)
    if config.algorithm not in _RESUMABLE and len(rows) < config.num_iterations:
        completed, state = 0, None
    completed = min(completed, len(rows))
    if completed >= config.num_iterations:
        return SeedRun(seed, rows[: config.num_iterations], d)
    if completed and state is not None:
        algo.load_state_dict(state)
    else:
        completed = 0
    # keep the header and exactly ``completed`` rows; a row written before its
    # state was saved, or a torn line, is dropped and recomputed
    lines = csv_path.read_text().splitlines(keepends=True) if csv_path.exists() else []
    good = [CSV_HEADER + "\n"] + lines[1 : completed + 1]
    if lines != good:
        _atomic_write(csv_path, "".join(good).encode())
    last = config.num_iterations - 1
    with open(csv_path, "a") as fh:
        for it in range(completed, config.num_iterations):
            t0 = time.perf_counter()
            res = algo.iterate(it)
            wall = (time.perf_counter() - t0) * 1e3 if config.record_timing else 0.0
            line = format_row(seed, it, res.returns, res.mean_kl, res.steps, wall)
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
            every = config.checkpoint_every
            if it == last or (every > 0 and (it + 1) % every == 0):
                save_policy(d / f"iter{it}.policy", algo.policy, extra={"seed": seed, "iteration": it})
            _save_state(state_path, algo.state_dict(), it + 1)
            log.info("seed %d iteration %d: %s", seed, it, line)
    return SeedRun(seed, read_progress(csv_path), d)


def _run_seed_job(args):
    config, seed, directory = args
    return run_seed(config, seed, directory)


def run_experiment(config: ExperimentConfig, out, jobs: int = 1, directory=None) -> dict[int, SeedRun]:
    """Run every seed of ``config``; seeds are independent jobs."""
    directory = Path(directory) if directory is not None else run_dir(out, config)
    directory.mkdir(parents=True, exist_ok=True)
    make_algorithm(config, config.seeds[0])  # fail fast on bad ids or options
    dump_config(config, directory / "config.ini")
    args = [(config, s, directory) for s in config.seeds]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            runs = list(pool.map(_run_seed_job, args))
    else:
        runs = [_run_seed_job(a) for a in args]
    return {r.seed: r for r in runs}


def seed_performances(runs: dict[int, SeedRun]) -> dict[int, float]:
    return {s: performance_from_rows(r.rows) for s, r in runs.items()}


# --------------------------------------------------------------- grid search


@dataclass
class GridPoint:
    index: int
    hyperparameters: dict
    performances: dict | None = None
    score: float | None = None
    error: str | None = None


def grid_points(grid: dict) -> list[dict]:
    """Cartesian product of the axes, first axis varying slowest."""
    if not grid:
        raise ConfigurationError("empty grid")
    points = [{}]
    for key, values in grid.items():
        if not values:
            raise ConfigurationError(f"grid axis {key!r} has no values")
        points = [{**p, key: v} for p in points for v in values]
    return points


def select_best(points: list[GridPoint]) -> GridPoint:
    """Highest mean - std of per-seed performance; ties go to the lower index."""
    try:
        return points[best_index([p.score for p in points])]
    except ValueError:
        detail = "; ".join(f"point {p.index} {p.hyperparameters}: {p.error}" for p in points)
        raise RuntimeError(f"every grid point failed: {detail}") from None


def grid_search(config: ExperimentConfig, grid: dict | None, out, jobs: int = 1):
    """Run every grid point over the config's seeds and pick the best one.

    Returns ``(best, points)``; a summary is written to ``grid.csv`` next to
    the point directories.
    """
    grid = grid if grid is not None else config.grid
    base = run_dir(out, config) / "grid"
    points = []
    for i, hp in enumerate(grid_points(grid)):
        cfg = config.replace(hyperparameters={**config.hyperparameters, **hp})
        point = GridPoint(i, hp)
        try:
            runs = run_experiment(cfg, out, jobs, directory=base / f"point{i:03d}")
            point.performances = seed_performances(runs)
            point.score = selection_score(list(point.performances.values()))
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            log.warning("grid point %d %s failed: %s", i, hp, exc)
            point.error = f"{type(exc).__name__}: {exc}"
        points.append(point)
    with open(base / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", *grid, "score", "mean", "std", "error"])
        for p in points:
            perf = np.array(list((p.performances or {}).values()))
            w.writerow([p.index, *(p.hyperparameters[k] for k in grid), _fmt(p.score),
                        _fmt(perf.mean() if perf.size else None), _fmt(perf.std() if perf.size else None),
                        p.error or ""])
    return select_best(points), points
