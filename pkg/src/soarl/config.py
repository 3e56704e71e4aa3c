"""Experiment configuration, layered as file < environment < command line."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional, get_type_hints

import yaml

from .controller import ControllerConfig

ENV_PREFIX = "SOARL_"
PROTOCOLS = ("scratch", "sequential", "transfer")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    map: str = "office_world_A"
    task: int = 1
    tasks: list[int] = field(default_factory=lambda: [1, 2, 3])
    protocol: str = "scratch"
    episodes: int = 3000
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs/default"

    alpha: float = 0.1
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.6
    psi: float = 100.0
    c: float = 1.0
    tau: float = 0.95
    lam: float = 0.1
    penalty: float = -1.0
    step_cost: float = -0.01
    task_reward: float = 1.0
    option_budget: int = 100
    max_episode_steps: int = 500
    max_plan_length: int = 12
    exploration_count: int = 20
    sr_threshold: float = 0.95
    key_mode: str = "position"
    greedy_when_validated: bool = True
    freeze_reused: bool = False

    annotator: str = "mock"
    annotator_endpoint: Optional[str] = None
    annotator_model: Optional[str] = None
    annotator_timeout: float = 10.0
    annotator_retries: int = 2
    annotator_fault_rate: float = 0.0
    label_retries: int = 2

    constraint: str = ""
    library_in: Optional[str] = None
    library_out: Optional[str] = None

    criterion_window: int = 50
    criterion_threshold: float = 0.95
    backend: Optional[str] = None

    def controller_config(self) -> ControllerConfig:
        return ControllerConfig(
            alpha=self.alpha, gamma=self.gamma, epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end,
            epsilon_decay_episodes=int(round(self.epsilon_decay_fraction * self.episodes)),
            psi=self.psi, c=self.c, exploration_count=self.exploration_count,
            sr_threshold=self.sr_threshold, tau=self.tau, option_budget=self.option_budget,
            max_plan_length=self.max_plan_length, max_episode_steps=self.max_episode_steps,
            lam=self.lam, penalty=self.penalty, key_mode=self.key_mode,
            greedy_when_validated=self.greedy_when_validated, freeze_reused=self.freeze_reused,
            annotator_retries=self.label_retries, step_cost=self.step_cost, task_reward=self.task_reward,
        )

    def phases(self) -> list[int]:
        return list(self.tasks) if self.protocol == "sequential" else [self.task]

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentConfig":
        from .officeworld import TASKS, read_map

        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        for t in [self.task, *self.tasks]:
            if t not in TASKS:
                raise ConfigError(f"unknown task id {t}; valid ids are {sorted(TASKS)}")
        if self.protocol == "sequential" and not self.tasks:
            raise ConfigError("sequential protocol needs a non-empty task list")
        if self.episodes <= 0:
            raise ConfigError("episodes must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not 0.0 < self.alpha <= 1.0 or not 0.0 <= self.gamma < 1.0:
            raise ConfigError("alpha must lie in (0, 1] and gamma in [0, 1)")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ConfigError("epsilon schedule must satisfy 0 <= end <= start <= 1")
        if not 0.0 <= self.epsilon_decay_fraction <= 1.0:
            raise ConfigError("epsilon_decay_fraction must lie in [0, 1]")
        if not 0.0 <= self.tau <= 1.0 or not 0.0 <= self.sr_threshold <= 1.0:
            raise ConfigError("success thresholds must lie in [0, 1]")
        if not 0.0 <= self.annotator_fault_rate <= 1.0:
            raise ConfigError("annotator_fault_rate must lie in [0, 1]")
        if min(self.option_budget, self.max_episode_steps, self.max_plan_length, self.criterion_window) <= 0:
            raise ConfigError("budgets and windows must be positive")
        if self.key_mode not in ("position", "full"):
            raise ConfigError("key_mode must be 'position' or 'full'")
        if self.annotator not in ("mock", "http"):
            raise ConfigError("annotator must be 'mock' or 'http'")
        if self.annotator == "http" and not self.annotator_endpoint:
            raise ConfigError("annotator_endpoint is required for the http annotator")
        if self.backend not in (None, "compiled", "python"):
            raise ConfigError("backend must be 'compiled' or 'python'")
        if self.protocol == "transfer":
            if not self.library_in:
                raise ConfigError("transfer protocol needs library_in")
            for s in self.seeds:
                path = library_path(self.library_in, s, len(self.seeds))
                if not Path(path).is_file():
                    raise ConfigError(f"input skill library {path} does not exist")
        elif self.library_in:
            raise ConfigError("library_in is only read by the transfer protocol")
        try:
            read_map(self.map)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot load map {self.map!r}: {e}") from e
        return self


def library_path(template: str, seed: int, n_seeds: int) -> str:
    """``{seed}`` in a library path is replaced per seed; multi-seed runs without it get a suffix."""
    if "{seed}" in template:
        return template.replace("{seed}", str(seed))
    if n_seeds == 1:
        return template
    p = Path(template)
    return str(p.with_name(f"{p.stem}_seed{seed}{p.suffix}"))


_HINTS = None


def _hints() -> dict:
    global _HINTS
    if _HINTS is None:
        _HINTS = get_type_hints(ExperimentConfig)
    return _HINTS


def coerce(name: str, value: Any) -> Any:
    """Convert a raw (often string) value to the declared type of field ``name``."""
    hint = _hints()[name]
    text = str(hint)
    if value is None:
        return None
    if isinstance(value, str):
        v = value.strip()
        if "Optional" in text or "None" in text:
            if v.lower() in ("", "none", "null"):
                return None
        if hint is bool:
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        if "list" in text:
            return [int(x) for x in v.replace(",", " ").split()]
        try:
            if hint is int:
                return int(v)
            if hint is float or "float" in text:
                return float(v)
        except ValueError:
            raise ConfigError(f"{name}: cannot parse {value!r}") from None
        return value
    if "list" in text:
        if isinstance(value, int):
            return [value]
        return [int(x) for x in value]
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def merge(base: ExperimentConfig, overrides: Mapping[str, Any], source: str) -> ExperimentConfig:
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(overrides) - names)
    if unknown:
        raise ConfigError(f"unknown config keys from {source}: {', '.join(unknown)}")
    return dataclasses.replace(base, **{k: coerce(k, v) for k, v in overrides.items()})


def read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    return data


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for f in fields(ExperimentConfig):
        key = ENV_PREFIX + f.name.upper()
        if key in environ:
            out[f.name] = environ[key]
    return out


def load_config(path=None, cli: Mapping[str, Any] | None = None,
                environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        cfg = merge(cfg, read_config_file(path), str(path))
    cfg = merge(cfg, env_overrides(environ), "environment")
    cfg = merge(cfg, {k: v for k, v in (cli or {}).items() if v is not None}, "command line")
    return cfg.validate()


def dump_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
