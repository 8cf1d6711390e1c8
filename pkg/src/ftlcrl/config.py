"""Experiment configuration: a strict key/value tree loaded from YAML."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import types
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union, get_args, get_origin, get_type_hints

import yaml

from .errors import ConfigError

__all__ = [
    "EnvSection",
    "ScheduleSection",
    "EncoderSection",
    "PlannerSection",
    "EvalSection",
    "Config",
    "load_config",
    "config_from_dict",
    "apply_override",
    "parse_value",
]


@dataclass
class EnvSection:
    name: str = "boxworld"
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class ScheduleSection:
    task_order: list[int] | None = None
    episodes_per_task: int = 30
    episode_cap: int | None = None


@dataclass
class EncoderSection:
    num_tiles: int = 300
    grid_dim: int = 2
    bins: int = 9
    seed: int | None = None


@dataclass
class PlannerSection:
    population: int = 150
    horizon: int = 15
    iterations: int = 3
    elite_fraction: float = 0.1
    noise_beta: float = 2.0
    memory_fraction: float = 0.3
    sigma_init: float | None = None
    sigma_min: float = 1e-3
    threads: int = 1


@dataclass
class EvalSection:
    every: int = 5
    episodes: int = 10
    mse_buffer_cap: int = 1000


@dataclass
class Config:
    env: EnvSection = field(default_factory=EnvSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    lambda_inv: float = 0.005
    planner: PlannerSection = field(default_factory=PlannerSection)
    agent: str = "oa"
    coreset_capacity: int = 10_000
    refit_every: int = 250
    eval: EvalSection = field(default_factory=EvalSection)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs/default"
    log_episodes: bool = True

    def validate(self) -> None:
        if self.env.name not in ("boxworld", "ringworld"):
            raise ConfigError(f"env.name must be boxworld or ringworld, got {self.env.name!r}")
        if self.agent not in ("oa", "dense", "finetune", "coreset"):
            raise ConfigError(f"agent must be one of oa|dense|finetune|coreset, got {self.agent!r}")
        if not self.lambda_inv > 0:
            raise ConfigError("lambda_inv must be positive")
        if self.coreset_capacity < 1 or self.refit_every < 1:
            raise ConfigError("coreset_capacity and refit_every must be >= 1")
        if self.eval.every < 1 or self.eval.episodes < 1 or self.eval.mse_buffer_cap < 1:
            raise ConfigError("eval.every, eval.episodes and eval.mse_buffer_cap must be >= 1")
        if self.schedule.episodes_per_task < 1:
            raise ConfigError("schedule.episodes_per_task must be >= 1")
        if self.schedule.episode_cap is not None and self.schedule.episode_cap < 1:
            raise ConfigError("schedule.episode_cap must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        for s in self.seeds:
            if not isinstance(s, int) or s < 0:
                raise ConfigError(f"seeds must be non-negative integers, got {s!r}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(cls, data: Any, path: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    hints = get_type_hints(cls)
    kwargs = {}
    for name, value in data.items():
        where = f"{path}.{name}" if path else name
        sub = _SECTION_TYPES.get((cls, name))
        if sub:
            kwargs[name] = _build(sub, value, where)
        else:
            _check_type(value, hints[name], where)
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _matches(value: Any, hint: Any) -> bool:
    origin = get_origin(hint)
    if hint is Any:
        return True
    if origin is Union or origin is types.UnionType:
        return any(_matches(value, h) for h in get_args(hint))
    if hint is type(None):
        return value is None
    if origin is list:
        (item,) = get_args(hint) or (Any,)
        return isinstance(value, list) and all(_matches(v, item) for v in value)
    if origin is dict:
        return isinstance(value, dict)
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, hint)


def _check_type(value: Any, hint: Any, where: str) -> None:
    if not _matches(value, hint):
        raise ConfigError(f"{where}: expected {getattr(hint, '__name__', hint)}, got {value!r}")


_SECTION_TYPES = {
    (Config, "env"): EnvSection,
    (Config, "schedule"): ScheduleSection,
    (Config, "encoder"): EncoderSection,
    (Config, "planner"): PlannerSection,
    (Config, "eval"): EvalSection,
}


def config_from_dict(data: dict[str, Any]) -> Config:
    cfg = _build(Config, data, "")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data)


def parse_value(text: str) -> Any:
    """Interpret an override value with YAML scalar rules (``3`` -> int, ``null`` -> None)."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def apply_override(cfg: Config, key: str, value: Any) -> Config:
    """Return a copy of ``cfg`` with the dotted ``key`` replaced."""
    data = copy.deepcopy(cfg.to_dict())
    node = data
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    leaf = parts[-1]
    # env.params is free-form; everything else must already exist
    if not isinstance(node, dict) or (leaf not in node and parts[:-1] != ["env", "params"]):
        raise ConfigError(f"unknown config key {key!r}")
    node[leaf] = value
    return config_from_dict(data)
