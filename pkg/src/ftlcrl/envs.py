"""Small continual-control worlds with one shared dynamics and many goals.

``BoxWorld`` moves ``M`` independent boxes on a line; task ``k`` asks for
box ``k`` to reach a goal.  ``RingWorld`` is a damped point mass in the
plane whose goals sit on a circle of radius 1.  Neither step function takes
a task argument: tasks differ only in their reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

__all__ = [
    "TaskSpec",
    "EnvState",
    "Schedule",
    "BoxWorld",
    "RingWorld",
    "boxworld_step",
    "ringworld_step",
    "reward",
    "success",
    "schedule_task",
    "ring_task_order",
    "make_env",
]


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    goal: np.ndarray
    success_radius: float
    coords: tuple[int, ...]
    reward_kind: str = "negative_distance"

    def __post_init__(self) -> None:
        if not self.success_radius > 0:
            raise ConfigError("success_radius must be positive")
        if len(self.coords) != len(self.goal):
            raise ConfigError("goal length must match the task coordinates")
        if self.reward_kind != "negative_distance":
            raise ConfigError(f"unknown reward kind {self.reward_kind!r}")


@dataclass
class EnvState:
    s: np.ndarray
    step_count: int = 0
    done: bool = False


@dataclass(frozen=True)
class Schedule:
    task_order: tuple[int, ...]
    episodes_per_task: int
    episode_cap: int

    def __post_init__(self) -> None:
        if not self.task_order:
            raise ConfigError("task_order must be non-empty")
        if self.episodes_per_task < 1:
            raise ConfigError("episodes_per_task must be >= 1")
        if self.episode_cap < 1:
            raise ConfigError("episode_cap must be >= 1")

    @property
    def num_episodes(self) -> int:
        return len(self.task_order) * self.episodes_per_task


def schedule_task(schedule: Schedule, episode_index: int) -> int:
    """Task for a training episode; indices past the end stay on the last task."""
    if episode_index < 0:
        raise InputError("episode_index must be >= 0")
    k = min(episode_index // schedule.episodes_per_task, len(schedule.task_order) - 1)
    return schedule.task_order[k]


def _clip_action(a: np.ndarray, low: float, high: float) -> tuple[np.ndarray, bool]:
    clipped = np.clip(a, low, high)
    return clipped, bool(np.any(clipped != a))


def boxworld_step(s: np.ndarray, a: np.ndarray, gain: float = 0.1, bound: float = 2.0) -> np.ndarray:
    a = np.clip(a, -1.0, 1.0)
    return np.clip(s + gain * a, -bound, bound)


def ringworld_step(
    s: np.ndarray,
    a: np.ndarray,
    damping: float = 0.8,
    accel: float = 0.2,
    dt: float = 0.5,
    vmax: float = 0.5,
    bound: float = 2.0,
) -> np.ndarray:
    a = np.clip(a, -1.0, 1.0)
    p, v = s[..., :2], s[..., 2:]
    v_next = np.clip(damping * v + accel * a, -vmax, vmax)
    p_next = np.clip(p + dt * v_next, -bound, bound)
    return np.concatenate([p_next, v_next], axis=-1)


def reward(task: TaskSpec, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> np.ndarray | float:
    """Negative distance between the task coordinates of ``s_next`` and the goal."""
    rel = np.asarray(s_next)[..., list(task.coords)]
    out = -np.linalg.norm(rel - task.goal, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def success(task: TaskSpec, s: np.ndarray) -> bool:
    rel = np.asarray(s)[list(task.coords)]
    d2 = float(np.sum((rel - task.goal) ** 2))
    return d2 < task.success_radius**2


def ring_task_order(num_tasks: int) -> tuple[int, ...]:
    """Greedy order where each next goal is angularly farthest from the current one."""
    order = [0]
    left = list(range(1, num_tasks))
    while left:
        cur = order[-1]

        def gap(j: int) -> float:
            d = abs(j - cur) % num_tasks
            return min(d, num_tasks - d)

        nxt = max(left, key=lambda j: (gap(j), -j))
        order.append(nxt)
        left.remove(nxt)
    return tuple(order)


@dataclass
class _Env:
    start_noise: float = 0.05
    state_bound: float = 2.0
    action_low: tuple[float, ...] = field(init=False)
    action_high: tuple[float, ...] = field(init=False)

    state_dim: int = field(init=False)
    action_dim: int = field(init=False)
    num_tasks: int = field(init=False)

    def nominal_start(self) -> np.ndarray:
        return np.zeros(self.state_dim)

    def task(self, task_id: int) -> TaskSpec:
        raise NotImplementedError

    def dynamics(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reset(self, task: TaskSpec, rng: np.random.Generator) -> EnvState:
        noise = rng.uniform(-self.start_noise, self.start_noise, size=self.state_dim)
        return EnvState(self.nominal_start() + noise)

    def step(self, state: EnvState, task: TaskSpec, a: np.ndarray, cap: int):
        """Advance one step; returns ``(next_state, reward, success, action_clipped)``."""
        if state.done:
            raise InputError("episode finished; reset before stepping")
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (self.action_dim,):
            raise InputError(f"action shape {a.shape} != ({self.action_dim},)")
        a_used, clipped = _clip_action(a, self.action_low[0], self.action_high[0])
        s_next = self.dynamics(state.s, a_used)
        r = reward(task, state.s, a_used, s_next)
        ok = success(task, s_next)
        n = state.step_count + 1
        return EnvState(s_next, n, ok or n >= cap), r, ok, clipped

    def default_order(self) -> tuple[int, ...]:
        return tuple(range(self.num_tasks))


@dataclass
class BoxWorld(_Env):
    num_boxes: int = 2
    gain: float = 0.1
    goal: float = 1.0
    success_radius: float = 0.05

    def __post_init__(self) -> None:
        if self.num_boxes < 1:
            raise ConfigError("num_boxes must be >= 1")
        self.state_dim = self.num_boxes
        self.action_dim = self.num_boxes
        self.num_tasks = self.num_boxes
        self.action_low = (-1.0,) * self.num_boxes
        self.action_high = (1.0,) * self.num_boxes
        if abs(self.goal) > self.state_bound:
            raise ConfigError("goal outside the state bounds")

    def task(self, task_id: int) -> TaskSpec:
        box = task_id % self.num_boxes
        return TaskSpec(task_id, np.array([self.goal]), self.success_radius, (box,))

    def dynamics(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return boxworld_step(s, a, self.gain, self.state_bound)


@dataclass
class RingWorld(_Env):
    num_goals: int = 4
    radius: float = 1.0
    damping: float = 0.8
    accel: float = 0.2
    dt: float = 0.5
    vmax: float = 0.5
    success_radius: float = 0.1

    def __post_init__(self) -> None:
        if self.num_goals < 1:
            raise ConfigError("num_goals must be >= 1")
        self.state_dim = 4
        self.action_dim = 2
        self.num_tasks = self.num_goals
        self.action_low = (-1.0, -1.0)
        self.action_high = (1.0, 1.0)
        if self.radius > self.state_bound:
            raise ConfigError("goal radius outside the state bounds")

    def task(self, task_id: int) -> TaskSpec:
        ang = 2.0 * math.pi * task_id / self.num_goals
        goal = self.radius * np.array([math.cos(ang), math.sin(ang)])
        return TaskSpec(task_id, goal, self.success_radius, (0, 1))

    def dynamics(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return ringworld_step(s, a, self.damping, self.accel, self.dt, self.vmax, self.state_bound)

    def default_order(self) -> tuple[int, ...]:
        return ring_task_order(self.num_goals)


def make_env(name: str, **params) -> BoxWorld | RingWorld:
    if name == "boxworld":
        return BoxWorld(**params)
    if name == "ringworld":
        return RingWorld(**params)
    raise ConfigError(f"unknown environment {name!r}")
