"""Model-based agents that plan with CEM on a linear model over sparse features.

``OnlineAgent`` keeps the follow-the-leader statistics and updates its
model every step.  The baselines share the encoder and planner but refit
an exact ridge model on a buffer every ``refit_every`` steps:

* ``DenseFTLAgent`` keeps everything (perfect memory),
* ``FineTuneAgent`` keeps only the current task's data,
* ``CoresetAgent`` keeps a reservoir sample of fixed capacity.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .envs import EnvState, TaskSpec, _Env, reward
from .errors import InputError, NumericalError
from .features import Encoder, SparseFeature
from .planner import PlanParams, PlanResult, cem_plan, init_mean, shift_mean
from .world_model import (
    SufficientStats,
    WorldModel,
    accumulate,
    predict_batch,
    solve_active,
)

__all__ = [
    "AgentKind",
    "Transition",
    "ReservoirBuffer",
    "reservoir_insert",
    "Agent",
    "OnlineAgent",
    "DenseFTLAgent",
    "FineTuneAgent",
    "CoresetAgent",
    "make_agent",
    "batch_ridge",
    "oa_step",
    "agent_step",
    "baseline_refit",
]


class AgentKind(str, enum.Enum):
    OA = "oa"
    DENSE = "dense"
    FINETUNE = "finetune"
    CORESET = "coreset"


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    task: int
    r: float = 0.0

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.s, self.a])

    @property
    def y(self) -> np.ndarray:
        return self.s_next - self.s


@dataclass
class ReservoirBuffer:
    capacity: int
    items: list = field(default_factory=list)
    seen: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise InputError("reservoir capacity must be >= 1")

    def __len__(self) -> int:
        return len(self.items)


def reservoir_insert(buf: ReservoirBuffer, item, rng: np.random.Generator) -> None:
    """Algorithm R: after ``n`` inserts each item is kept with probability ``B / n``."""
    if buf.seen < buf.capacity:
        buf.items.append(item)
    else:
        j = int(rng.integers(0, buf.seen + 1))
        if j < buf.capacity:
            buf.items[j] = item
    buf.seen += 1


def batch_ridge(
    enc: Encoder, transitions: list[Transition], lambda_inv: float, out_dim: int
) -> tuple[np.ndarray, np.ndarray]:
    """Exact ridge solution ``(Phi^T Phi + I/lam)^-1 Phi^T Y`` over a buffer.

    Rows outside the buffer's support have a zero right-hand side and a
    diagonal ``1/lam`` block, so they are exactly zero; only the touched
    rows are solved.  Returns ``(W, touched_mask)``.
    """
    D = enc.dim
    W = np.zeros((D, out_dim))
    touched = np.zeros(D, dtype=bool)
    if not transitions:
        return W, touched
    X = np.stack([t.x for t in transitions])
    Y = np.stack([t.y for t in transitions])
    idx, val = enc.encode_batch(X)
    touched[idx.ravel()] = True
    cols = np.flatnonzero(touched)
    pos = np.full(D, -1, dtype=np.int64)
    pos[cols] = np.arange(cols.size)
    n, k = idx.shape
    phi = sp.csr_array((val.ravel(), (np.repeat(np.arange(n), k), pos[idx.ravel()])), shape=(n, cols.size))
    A = (phi.T @ phi).toarray()
    A[np.diag_indices_from(A)] += lambda_inv
    B = phi.T @ Y
    try:
        W[cols] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A, lower=True), B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"ridge system not SPD: {exc}") from exc
    return W, touched


class Agent:
    kind: AgentKind

    def __init__(
        self,
        enc: Encoder,
        state_dim: int,
        plan_params: PlanParams,
        lambda_inv: float,
        pool: ThreadPoolExecutor | None = None,
    ) -> None:
        self.enc = enc
        self.state_dim = state_dim
        self.plan_params = plan_params
        self.lambda_inv = lambda_inv
        self.model = WorldModel(enc.dim, state_dim, lambda_inv)
        self.pool = pool
        self.mu = init_mean(plan_params)
        self._init_col = 0.5 * (plan_params.low + plan_params.high)
        self._task: int | None = None
        self.steps = 0

    # -- planning ------------------------------------------------------------
    def dynamics(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return predict_batch(self.model.W, self.enc, s, a)

    def plan(self, s: np.ndarray, task: TaskSpec, mu: np.ndarray, rng: np.random.Generator) -> PlanResult:
        return cem_plan(
            s,
            self.dynamics,
            lambda s0, a, s1: reward(task, s0, a, s1),
            mu,
            self.plan_params,
            rng,
            self.pool,
        )

    def begin_step(self, task: TaskSpec) -> None:
        """Reset or shift the warm-start mean depending on whether the task changed."""
        if self._task != task.task_id:
            self.mu = init_mean(self.plan_params)
            self._task = task.task_id

    def end_step(self, result: PlanResult) -> None:
        self.mu = shift_mean(result.mu, self._init_col)

    def reset_plan(self) -> None:
        self.mu = init_mean(self.plan_params)

    # -- learning ------------------------------------------------------------
    def prepare(self) -> None:
        """Bring the model up to date with every observed transition."""

    def observe(self, tr: Transition, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def on_task_switch(self) -> None:
        """Hook for agents that are told about task boundaries."""

    def stats(self) -> SufficientStats | None:
        return None


class OnlineAgent(Agent):
    kind = AgentKind.OA

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.suff = SufficientStats(self.enc.dim, self.state_dim)
        # support of the newest accumulated input, not yet folded into W
        self.pending: np.ndarray | None = None
        self.solves = 0

    def prepare(self) -> None:
        if self.pending is not None:
            solve_active(self.model, self.suff, self.pending)
            self.solves += 1
            self.pending = None

    def observe(self, tr: Transition, rng: np.random.Generator) -> None:
        phi = self.enc.encode(tr.x)
        accumulate(self.suff, phi, tr.y)
        self.pending = phi.indices

    def stats(self) -> SufficientStats:
        return self.suff


class _RefitAgent(Agent):
    def __init__(self, *args, refit_every: int = 250, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        if refit_every < 1:
            raise InputError("refit_every must be >= 1")
        self.refit_every = refit_every
        self.refits = 0

    def buffer(self) -> list[Transition]:
        raise NotImplementedError

    def refit(self) -> None:
        buf = self.buffer()
        if not buf:
            return
        W, touched = batch_ridge(self.enc, buf, self.lambda_inv, self.state_dim)
        self.model.W = W
        self.model.active |= touched
        self.refits += 1

    def observe(self, tr: Transition, rng: np.random.Generator) -> None:
        self._store(tr, rng)
        if self.steps % self.refit_every == 0:
            self.refit()

    def _store(self, tr: Transition, rng: np.random.Generator) -> None:
        raise NotImplementedError


class DenseFTLAgent(_RefitAgent):
    """Perfect memory: all data, exact ridge on each refit."""

    kind = AgentKind.DENSE

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.suff = SufficientStats(self.enc.dim, self.state_dim)
        self._touched = np.zeros(self.enc.dim, dtype=bool)

    def _store(self, tr: Transition, rng: np.random.Generator) -> None:
        phi = self.enc.encode(tr.x)
        accumulate(self.suff, phi, tr.y)
        self._touched[phi.indices] = True

    def buffer(self) -> list[Transition]:
        raise NotImplementedError("DenseFTL refits from its sufficient statistics")

    def refit(self) -> None:
        if self.suff.count == 0:
            return
        cols = np.flatnonzero(self._touched)
        A = self.suff.block(cols)
        A[np.diag_indices_from(A)] += self.lambda_inv
        W = np.zeros_like(self.model.W)
        W[cols] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A, lower=True), self.suff.B[cols])
        self.model.W = W
        self.model.active |= self._touched
        self.refits += 1

    def stats(self) -> SufficientStats:
        return self.suff


class FineTuneAgent(_RefitAgent):
    """Keeps only the current task's data; the buffer is emptied at a task switch."""

    kind = AgentKind.FINETUNE

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.data: list[Transition] = []

    def _store(self, tr: Transition, rng: np.random.Generator) -> None:
        self.data.append(tr)

    def buffer(self) -> list[Transition]:
        return self.data

    def on_task_switch(self) -> None:
        self.data = []


class CoresetAgent(_RefitAgent):
    kind = AgentKind.CORESET

    def __init__(self, *args, capacity: int = 10_000, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.reservoir = ReservoirBuffer(capacity)

    def _store(self, tr: Transition, rng: np.random.Generator) -> None:
        reservoir_insert(self.reservoir, tr, rng)

    def buffer(self) -> list[Transition]:
        return self.reservoir.items


def make_agent(
    kind: AgentKind | str,
    enc: Encoder,
    state_dim: int,
    plan_params: PlanParams,
    lambda_inv: float,
    *,
    refit_every: int = 250,
    coreset_capacity: int = 10_000,
    pool: ThreadPoolExecutor | None = None,
) -> Agent:
    kind = AgentKind(kind)
    args = (enc, state_dim, plan_params, lambda_inv)
    if kind is AgentKind.OA:
        return OnlineAgent(*args, pool=pool)
    if kind is AgentKind.DENSE:
        return DenseFTLAgent(*args, refit_every=refit_every, pool=pool)
    if kind is AgentKind.FINETUNE:
        return FineTuneAgent(*args, refit_every=refit_every, pool=pool)
    return CoresetAgent(*args, refit_every=refit_every, capacity=coreset_capacity, pool=pool)


def baseline_refit(agent: _RefitAgent) -> None:
    agent.refit()


def agent_step(
    agent: Agent,
    env: _Env,
    state: EnvState,
    task: TaskSpec,
    rng: np.random.Generator,
    cap: int,
    learn: bool = True,
):
    """One control step: update model, plan, act, then learn from the outcome.

    Returns ``(next_state, transition, success, action_clipped)``.
    """
    if state.done:
        raise InputError("episode is done; reset the environment first")
    agent.prepare()
    agent.begin_step(task)
    result = agent.plan(state.s, task, agent.mu, rng)
    nxt, r, ok, clipped = env.step(state, task, result.action, cap)
    tr = Transition(state.s.copy(), result.action.copy(), nxt.s.copy(), task.task_id, r)
    if learn:
        agent.steps += 1
        agent.observe(tr, rng)
    agent.end_step(result)
    return nxt, tr, ok, clipped


def oa_step(agent: OnlineAgent, env: _Env, state: EnvState, task: TaskSpec, rng: np.random.Generator, cap: int):
    if not isinstance(agent, OnlineAgent):
        raise InputError("oa_step needs an OnlineAgent")
    return agent_step(agent, env, state, task, rng, cap)
