"""Cross-entropy-method MPC planner over learned or true dynamics.

Candidates are ``clip(mu + noise * sigma)`` where the noise is temporally
correlated along the horizon (power spectrum ~ 1/f**beta).  Elites of the
previous iteration are partly carried over, and the mean of the last
solve is shifted one step to warm-start the next control step.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError

__all__ = [
    "PlanParams",
    "PlanState",
    "PlanResult",
    "sample_colored_noise",
    "rollout_return",
    "rollout_returns",
    "cem_plan",
    "shift_mean",
    "init_mean",
]

# (states (N, S), actions (N, A)) -> next states (N, S)
BatchDynamics = Callable[[np.ndarray, np.ndarray], np.ndarray]
# (states, actions, next_states) -> rewards (N,)
BatchReward = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PlanParams:
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    population: int = 150
    horizon: int = 15
    iterations: int = 3
    elite_fraction: float = 0.1
    noise_beta: float = 2.0
    memory_fraction: float = 0.3
    sigma_init: float | None = None
    sigma_min: float = 1e-3
    threads: int = 1

    def validate(self) -> None:
        low, high = self.low, self.high
        if low.shape != high.shape or low.ndim != 1 or low.size == 0:
            raise ConfigError("action bounds must be equal-length non-empty vectors")
        if not np.all(low < high):
            raise ConfigError("action_low must be < action_high elementwise")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.num_elites < 2:
            raise ConfigError("elite_fraction * population must give at least 2 elites")
        if self.num_elites > self.population:
            raise ConfigError("elite_fraction must be <= 1")
        if self.noise_beta < 0:
            raise ConfigError("noise_beta must be >= 0")
        if not 0.0 <= self.memory_fraction <= 1.0:
            raise ConfigError("memory_fraction must be in [0, 1]")
        if self.sigma_init is not None and self.sigma_init <= 0:
            raise ConfigError("sigma_init must be positive")
        if self.sigma_min <= 0:
            raise ConfigError("sigma_min must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.action_low, dtype=np.float64)

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.action_high, dtype=np.float64)

    @property
    def action_dim(self) -> int:
        return len(self.action_low)

    @property
    def num_elites(self) -> int:
        return math.ceil(self.elite_fraction * self.population - 1e-9)

    @property
    def num_memory(self) -> int:
        return int(round(self.memory_fraction * self.num_elites))

    def sigma0(self) -> np.ndarray:
        if self.sigma_init is not None:
            return np.full(self.action_dim, float(self.sigma_init))
        return 0.25 * (self.high - self.low)


@dataclass
class PlanState:
    mu: np.ndarray
    sigma: np.ndarray
    elite_memory: list[tuple[np.ndarray, float]] = field(default_factory=list)


@dataclass
class PlanResult:
    action: np.ndarray
    mu: np.ndarray
    best_return: float
    elite_best_per_iter: list[float]
    degenerate: bool = False


def sample_colored_noise(beta: float, A: int, H: int, rng: np.random.Generator) -> np.ndarray:
    """``A`` independent length-``H`` sequences with PSD ~ 1/f**beta.

    Each row is standardised to zero mean and unit variance.  ``beta == 0``
    (and ``H == 1``, where no spectrum exists) gives i.i.d. standard normals.
    """
    if beta < 0:
        raise ConfigError(f"noise beta must be >= 0, got {beta}")
    if H < 1:
        raise ConfigError(f"horizon must be >= 1, got {H}")
    return _colored_noise(beta, (A, H), rng)


def _colored_noise(beta: float, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    H = shape[-1]
    if beta == 0 or H == 1:
        return rng.standard_normal(shape)
    freqs = np.fft.rfftfreq(H)
    freqs[0] = freqs[1]
    scale = freqs ** (-beta / 2.0)
    spec_shape = shape[:-1] + (freqs.size,)
    re = rng.standard_normal(spec_shape) * scale
    im = rng.standard_normal(spec_shape) * scale
    im[..., 0] = 0.0
    if H % 2 == 0:
        im[..., -1] = 0.0
    x = np.fft.irfft(re + 1j * im, n=H, axis=-1)
    x -= x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    std[std == 0.0] = 1.0
    return x / std


def rollout_returns(
    dynamics: BatchDynamics, reward: BatchReward, s0: np.ndarray, actions: np.ndarray
) -> np.ndarray:
    """Undiscounted returns of ``N`` action sequences, ``actions`` is ``(N, A, H)``.

    One reward term per model step, ``R(s_i, a_i, s_{i+1})`` for
    ``i = 0 .. H-1``, so the final predicted state is scored through the
    last transition.  Sequences whose predicted state turns non-finite get
    ``-inf``.
    """
    n, _, horizon = actions.shape
    s = np.broadcast_to(np.asarray(s0, dtype=np.float64), (n, len(s0))).copy()
    total = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    with np.errstate(all="ignore"):
        for h in range(horizon):
            a = actions[:, :, h]
            s_next = dynamics(s, a)
            ok = np.all(np.isfinite(s_next), axis=1)
            alive &= ok
            s_next = np.where(ok[:, None], s_next, 0.0)
            total += np.where(alive, reward(s, a, s_next), 0.0)
            s = s_next
    total[~alive] = -np.inf
    return total


def rollout_return(
    dynamics: BatchDynamics, reward: BatchReward, s0: np.ndarray, actions: np.ndarray
) -> float:
    """Return of a single ``(A, H)`` action sequence."""
    return float(rollout_returns(dynamics, reward, s0, np.asarray(actions)[None])[0])


def init_mean(params: PlanParams) -> np.ndarray:
    mid = 0.5 * (params.low + params.high)
    return np.repeat(mid[:, None], params.horizon, axis=1)


def shift_mean(mu: np.ndarray, init_column: np.ndarray) -> np.ndarray:
    out = np.empty_like(mu)
    out[:, :-1] = mu[:, 1:]
    out[:, -1] = init_column
    return out


def _evaluate(
    dynamics: BatchDynamics,
    reward: BatchReward,
    s0: np.ndarray,
    cands: np.ndarray,
    pool: ThreadPoolExecutor | None,
    threads: int,
) -> np.ndarray:
    # rows are independent and every op is row-wise, so chunking cannot
    # change a candidate's value
    if pool is None or threads == 1 or len(cands) < 2 * threads:
        return rollout_returns(dynamics, reward, s0, cands)
    chunks = np.array_split(np.arange(len(cands)), threads)
    parts = list(pool.map(lambda ix: rollout_returns(dynamics, reward, s0, cands[ix]), chunks))
    return np.concatenate(parts)


def cem_plan(
    s: np.ndarray,
    dynamics: BatchDynamics,
    reward: BatchReward,
    mu_init: np.ndarray,
    params: PlanParams,
    rng: np.random.Generator,
    pool: ThreadPoolExecutor | None = None,
) -> PlanResult:
    """Optimise an ``(A, H)`` action sequence from state ``s``; return its first action."""
    low = params.low[:, None]
    high = params.high[:, None]
    A, H = params.action_dim, params.horizon
    mu = np.clip(np.asarray(mu_init, dtype=np.float64), low, high)
    sigma = np.repeat(params.sigma0()[:, None], H, axis=1)
    n_elite = params.num_elites
    elites: np.ndarray | None = None
    elite_ret: np.ndarray | None = None
    best_seq: np.ndarray | None = None
    best_ret = -np.inf
    history: list[float] = []

    for k in range(params.iterations):
        noise = _colored_noise(params.noise_beta, (params.population, A, H), rng)
        cands = np.clip(mu[None] + noise * sigma[None], low[None], high[None])
        if k > 0 and elites is not None and params.num_memory > 0:
            cands = np.concatenate([cands, elites[: params.num_memory]])
        rets = _evaluate(dynamics, reward, s, cands, pool, params.threads)
        # stable sort so ties resolve by candidate index
        order = np.argsort(-rets, kind="stable")[:n_elite]
        elites = cands[order]
        elite_ret = rets[order]
        if np.isfinite(elite_ret[0]) and elite_ret[0] > best_ret:
            best_ret = float(elite_ret[0])
            best_seq = elites[0].copy()
        history.append(float(elite_ret[0]))
        finite = np.isfinite(elite_ret)
        if not finite.any():
            continue
        pool_e = elites[finite]
        mu = pool_e.mean(axis=0)
        sigma = np.maximum(pool_e.std(axis=0), params.sigma_min)

    if best_seq is None:
        warnings.warn("all CEM candidates diverged; falling back to the initial mean", RuntimeWarning)
        mu0 = np.clip(np.asarray(mu_init, dtype=np.float64), low, high)
        return PlanResult(mu0[:, 0].copy(), mu0, -np.inf, history, degenerate=True)
    mu = np.clip(mu, low, high)
    return PlanResult(best_seq[:, 0].copy(), mu, best_ret, history)
