"""Run one agent through a task schedule and record continual-RL metrics."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .agent import Agent, Transition, agent_step, make_agent
from .config import Config
from .errors import ConfigError
from .envs import Schedule, TaskSpec, _Env, make_env
from .features import EncoderConfig, new_encoder
from .metrics import METRICS_SCHEMA_VERSION, EvalRecord, MetricsLog, model_mse, write_metrics_csv
from .planner import PlanParams
from .snapshot import save_snapshot
from .world_model import SufficientStats, utilization

__all__ = [
    "RunResult",
    "build_env",
    "check_config",
    "run_seed",
    "write_manifest",
    "build_schedule",
    "build_plan_params",
    "build_encoder_config",
    "build_agent",
    "evaluate",
    "run_experiment",
    "EPISODES_SCHEMA_VERSION",
]

log = logging.getLogger(__name__)

EPISODES_SCHEMA_VERSION = 1
DEFAULT_CAPS = {"boxworld": 100, "ringworld": 200}


@dataclass
class RunResult:
    metrics: MetricsLog
    out_dir: Path | None
    transitions: int
    snapshots: list[Path] = field(default_factory=list)
    mse_buffers: dict[int, list[Transition]] = field(default_factory=dict)
    agent: Agent | None = None


def build_env(cfg: Config) -> _Env:
    try:
        return make_env(cfg.env.name, **cfg.env.params)
    except TypeError as exc:
        raise ConfigError(f"env.params: {exc}") from exc


def check_config(cfg: Config) -> None:
    """Build every runtime object once so an invalid config fails before any run."""
    cfg.validate()
    env = build_env(cfg)
    schedule = build_schedule(cfg, env)
    bad = [t for t in schedule.task_order if not 0 <= t < env.num_tasks]
    if bad:
        raise ConfigError(f"schedule.task_order: task ids {bad} outside [0, {env.num_tasks})")
    build_plan_params(cfg, env)
    build_encoder_config(cfg, env, cfg.seeds[0]).validate()


def build_schedule(cfg: Config, env: _Env) -> Schedule:
    order = tuple(cfg.schedule.task_order) if cfg.schedule.task_order else env.default_order()
    cap = cfg.schedule.episode_cap or DEFAULT_CAPS[cfg.env.name]
    return Schedule(order, cfg.schedule.episodes_per_task, cap)


def build_plan_params(cfg: Config, env: _Env) -> PlanParams:
    p = cfg.planner
    params = PlanParams(
        action_low=tuple(env.action_low),
        action_high=tuple(env.action_high),
        population=p.population,
        horizon=p.horizon,
        iterations=p.iterations,
        elite_fraction=p.elite_fraction,
        noise_beta=p.noise_beta,
        memory_fraction=p.memory_fraction,
        sigma_init=p.sigma_init,
        sigma_min=p.sigma_min,
        threads=p.threads,
    )
    params.validate()
    return params


def build_encoder_config(cfg: Config, env: _Env, seed: int) -> EncoderConfig:
    e = cfg.encoder
    return EncoderConfig(
        input_dim=env.state_dim + env.action_dim,
        num_tiles=e.num_tiles,
        grid_dim=e.grid_dim,
        bins=e.bins,
        seed=seed if e.seed is None else e.seed,
    )


def build_agent(cfg: Config, env: _Env, seed: int, pool: ThreadPoolExecutor | None = None) -> Agent:
    enc = new_encoder(build_encoder_config(cfg, env, seed))
    return make_agent(
        cfg.agent,
        enc,
        env.state_dim,
        build_plan_params(cfg, env),
        cfg.lambda_inv,
        refit_every=cfg.refit_every,
        coreset_capacity=cfg.coreset_capacity,
        pool=pool,
    )


def evaluate(
    agent: Agent,
    env: _Env,
    task: TaskSpec,
    episodes: int,
    cap: int,
    rng: np.random.Generator,
) -> tuple[float, list[Transition]]:
    """Offline success rate of the current model on ``task``; the model is not updated."""
    saved_mu, saved_task = agent.mu, agent._task
    agent.prepare()
    wins = 0
    trs: list[Transition] = []
    for _ in range(episodes):
        state = env.reset(task, rng)
        agent.reset_plan()
        agent._task = task.task_id
        ok = False
        while not state.done:
            state, tr, ok, _ = agent_step(agent, env, state, task, rng, cap, learn=False)
            trs.append(tr)
        wins += int(ok)
    agent.mu, agent._task = saved_mu, saved_task
    return wins / episodes, trs


def _snapshot_stats(agent: Agent) -> SufficientStats:
    stats = agent.stats()
    return stats if stats is not None else SufficientStats(agent.enc.dim, agent.state_dim)


def run_experiment(
    cfg: Config,
    seed: int,
    out_dir: str | Path | None = None,
    *,
    write_snapshots: bool = True,
) -> RunResult:
    """Train ``cfg.agent`` through the schedule for one seed.

    With ``out_dir`` set, writes ``metrics.csv``, ``episodes.jsonl`` and
    ``snapshots/`` there (the manifest is the caller's job).
    """
    env = build_env(cfg)
    schedule = build_schedule(cfg, env)
    threads = cfg.planner.threads
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        return _run(cfg, seed, env, schedule, pool, out_dir, write_snapshots)
    finally:
        if pool is not None:
            pool.shutdown()


def _run(cfg, seed, env, schedule, pool, out_dir, write_snapshots) -> RunResult:
    agent = build_agent(cfg, env, seed, pool)
    root = np.random.SeedSequence(seed)
    train_seq, plan_seq, mem_seq, eval_seq = root.spawn(4)
    reset_rng = np.random.default_rng(train_seq)
    plan_rng = np.random.default_rng(plan_seq)
    mem_rng = np.random.default_rng(mem_seq)

    distinct = list(dict.fromkeys(schedule.task_order))
    metrics = MetricsLog(num_tasks=env.num_tasks)
    metrics.scale_tasks = len(distinct)
    mse_buffers: dict[int, list[Transition]] = {}
    seen: list[int] = []
    snapshots: list[Path] = []

    out = Path(out_dir) if out_dir is not None else None
    ep_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if write_snapshots:
            (out / "snapshots").mkdir(exist_ok=True)
        if cfg.log_episodes:
            ep_fh = open(out / "episodes.jsonl", "w", encoding="utf-8")

    global_step = 0
    window_wins = 0
    window_eps = 0
    checkpoint = 0
    prev_task: int | None = None
    try:
        for ep in range(schedule.num_episodes):
            task_id = schedule.task_order[ep // schedule.episodes_per_task]
            task = env.task(task_id)
            if prev_task is not None and task_id != prev_task:
                agent.on_task_switch()
            prev_task = task_id
            if task_id not in seen:
                seen.append(task_id)

            state = env.reset(task, reset_rng)
            ok = False
            while not state.done:
                state, tr, ok, clipped = agent_step(agent, env, state, task, plan_rng, schedule.episode_cap)
                global_step += 1
                if ep_fh is not None:
                    ep_fh.write(
                        json.dumps(
                            {
                                "episode": ep,
                                "step": state.step_count - 1,
                                "task": task_id,
                                "s": tr.s.tolist(),
                                "a": tr.a.tolist(),
                                "r": tr.r,
                                "success": ok,
                                "action_clipped": clipped,
                            }
                        )
                        + "\n"
                    )
            window_wins += int(ok)
            window_eps += 1

            n_done = ep + 1
            task_end = n_done % schedule.episodes_per_task == 0
            if n_done % cfg.eval.every == 0 or task_end or n_done == schedule.num_episodes:
                ev_rng = np.random.default_rng(eval_seq.spawn(1)[0])
                per_task: dict[int, float] = {}
                for tid in seen:
                    rate, trs = evaluate(agent, env, env.task(tid), cfg.eval.episodes, schedule.episode_cap, ev_rng)
                    per_task[tid] = rate
                    if tid == task_id:
                        buf = mse_buffers.setdefault(tid, [])
                        room = cfg.eval.mse_buffer_cap - len(buf)
                        buf.extend(trs[: max(room, 0)])
                mse = {tid: model_mse(agent.dynamics, buf) for tid, buf in mse_buffers.items() if buf}
                record = EvalRecord(global_step, len(seen), per_task, window_wins / window_eps)
                metrics.append(record, mse, utilization(agent.model))
                log.info(
                    "seed=%d ep=%d w=%d AP=%.3f online=%.2f",
                    seed, n_done, global_step, float(np.mean(list(per_task.values()))), record.online_success,
                )
                window_wins = window_eps = 0
                checkpoint += 1
                if task_end and write_snapshots and out is not None:
                    agent.prepare()
                    path = out / "snapshots" / f"after_task_{n_done // schedule.episodes_per_task - 1}_id{task_id}.bin"
                    save_snapshot(path, agent.enc.config, agent.model, _snapshot_stats(agent))
                    snapshots.append(path)
    finally:
        if ep_fh is not None:
            ep_fh.close()

    if out is not None:
        write_metrics_csv(metrics, out / "metrics.csv")
    return RunResult(metrics, out, global_step, snapshots, mse_buffers, agent)


def write_manifest(path: Path, cfg: Config, seed: int, outputs: dict[str, str], started: float, ended: float | None) -> None:
    manifest = {
        "config_hash": cfg.digest(),
        "seed": seed,
        "agent": cfg.agent,
        "code_version": __version__,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "ended": None if ended is None else datetime.fromtimestamp(ended, timezone.utc).isoformat(),
        "outputs": outputs,
        "schema": {"metrics_csv": METRICS_SCHEMA_VERSION, "episodes_jsonl": EPISODES_SCHEMA_VERSION},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_seed(cfg: Config, seed: int, out_dir: Path) -> RunResult:
    """Full artifact run for one seed: manifest, config snapshot, then the experiment."""
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    outputs = {
        "config": "config.yaml",
        "metrics": "metrics.csv",
        "episodes": "episodes.jsonl",
        "snapshots": "snapshots/",
    }
    (out_dir / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
    write_manifest(out_dir / "manifest.json", cfg, seed, outputs, started, None)
    result = run_experiment(cfg, seed, out_dir)
    # the pre-run manifest stays authoritative; completion is recorded alongside
    (out_dir / "manifest.done.json").write_text(
        json.dumps({"ended": datetime.fromtimestamp(time.time(), timezone.utc).isoformat(),
                    "transitions": result.transitions}, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return result
