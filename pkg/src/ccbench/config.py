"""Experiment configuration and its INI file format.

Schema (every key optional)::

    [task]
    name = cartpole                  ; task id
    wrappers = limited_sensors       ; comma list, innermost first
    noise_sigma = 0.1                ; noisy_delayed options
    delay_frames = 3
    policy = auto                    ; auto | gaussian_mlp | gaussian_lstm
    pole_length = 1.2                ; any other key overrides a physics field

    [algorithm]
    name = trpo
    step_size = 0.05                 ; remaining keys are hyperparameters

    [protocol]
    sim_steps_per_iter = 50000
    num_iterations = 500             ; 300 when wrappers are present
    horizon = 500                    ; 100 when wrappers are present
    discount = 0.99
    seeds = 0,1,2,3,4                ; list and/or ranges such as 0-4
    record_timing = true             ; false writes wall_ms = 0
    checkpoint_every = 10            ; 0 keeps only the final policy

    [grid]
    step_size = 0.01, 0.05, 0.1      ; explicit values
    learning_rate = log:1e-4:1e-1:4  ; log-spaced, endpoints included
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigurationError

WRAPPER_OPTIONS = ("noise_sigma", "delay_frames")


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_seeds(text) -> list[int]:
    """``"0,1,2"``, ``"0-4"`` or a mix; a bare integer is one seed."""
    if isinstance(text, int):
        return [text]
    if isinstance(text, (list, tuple)):
        return [int(s) for s in text]
    seeds: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigurationError("no seeds given")
    return seeds


def parse_grid_axis(text: str) -> list:
    text = text.strip()
    if text.startswith("log:"):
        try:
            _, lo, hi, n = text.split(":")
            return [float(v) for v in np.geomspace(float(lo), float(hi), int(n))]
        except ValueError as exc:
            raise ConfigurationError(f"bad log grid {text!r}; expected log:low:high:count") from exc
    return [parse_value(v) for v in text.split(",") if v.strip()]


@dataclass
class ExperimentConfig:
    task: str = "cartpole"
    wrappers: list[str] = field(default_factory=list)
    physics: dict = field(default_factory=dict)
    wrapper_options: dict = field(default_factory=dict)
    policy: str = "auto"
    algorithm: str = "trpo"
    hyperparameters: dict = field(default_factory=dict)
    sim_steps_per_iter: int = 50_000
    num_iterations: int | None = None
    horizon: int | None = None
    discount: float = 0.99
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    record_timing: bool = True
    checkpoint_every: int = 10
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        po = bool(self.wrappers)
        if self.num_iterations is None:
            self.num_iterations = 300 if po else 500
        if self.horizon is None:
            self.horizon = 100 if po else 500
        if self.sim_steps_per_iter < 1 or self.num_iterations < 1 or self.horizon < 1:
            raise ConfigurationError("budgets must be positive")
        if not 0 < self.discount <= 1:
            raise ConfigurationError("discount must lie in (0, 1]")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.policy not in ("auto", "gaussian_mlp", "gaussian_lstm"):
            raise ConfigurationError(f"unknown policy {self.policy!r}")

    @property
    def task_id(self) -> str:
        return "+".join([self.task, *self.wrappers])

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigurationError(f"cannot read config {path}")
    return config_from_parser(parser)


def loads_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    parser.read_string(text)
    return config_from_parser(parser)


def config_from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    known = {"task", "algorithm", "protocol", "grid"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigurationError(f"unknown config sections {sorted(unknown)}; valid: {sorted(known)}")
    kw: dict = {}
    if parser.has_section("task"):
        physics, options = {}, {}
        for key, raw in parser.items("task"):
            if key == "name":
                kw["task"] = raw.strip()
            elif key == "wrappers":
                kw["wrappers"] = [w.strip() for w in raw.split(",") if w.strip()]
            elif key == "policy":
                kw["policy"] = raw.strip()
            elif key in WRAPPER_OPTIONS:
                options[key] = parse_value(raw)
            else:
                physics[key] = parse_value(raw)
        kw["physics"], kw["wrapper_options"] = physics, options
    if parser.has_section("algorithm"):
        hyper = {}
        for key, raw in parser.items("algorithm"):
            if key == "name":
                kw["algorithm"] = raw.strip()
            else:
                hyper[key] = parse_value(raw)
        kw["hyperparameters"] = hyper
    if parser.has_section("protocol"):
        for key, raw in parser.items("protocol"):
            if key == "seeds":
                kw["seeds"] = parse_seeds(raw)
            elif key in ("sim_steps_per_iter", "num_iterations", "horizon", "checkpoint_every"):
                kw[key] = int(raw)
            elif key == "discount":
                kw[key] = float(raw)
            elif key == "record_timing":
                kw[key] = bool(parse_value(raw))
            else:
                raise ConfigurationError(f"unknown protocol key {key!r}")
    if parser.has_section("grid"):
        kw["grid"] = {key: parse_grid_axis(raw) for key, raw in parser.items("grid")}
    return ExperimentConfig(**kw)


def dump_config(config: ExperimentConfig, path) -> None:
    """Write ``config`` back in the INI format (used to record each run)."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["task"] = {"name": config.task, "wrappers": ",".join(config.wrappers), "policy": config.policy,
                      **{k: repr(v) for k, v in config.wrapper_options.items()},
                      **{k: repr(v) for k, v in config.physics.items()}}
    parser["algorithm"] = {"name": config.algorithm, **{k: repr(v) for k, v in config.hyperparameters.items()}}
    parser["protocol"] = {
        "sim_steps_per_iter": str(config.sim_steps_per_iter), "num_iterations": str(config.num_iterations),
        "horizon": str(config.horizon), "discount": repr(config.discount),
        "seeds": ",".join(str(s) for s in config.seeds), "record_timing": str(config.record_timing).lower(),
        "checkpoint_every": str(config.checkpoint_every)}
    with open(Path(path), "w") as fh:
        parser.write(fh)
