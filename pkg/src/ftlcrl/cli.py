"""Command line entry point: ``ftlcrl run|eval|verify|sweep``.

Exit codes: 0 success, 1 runtime failure (or failed hard verify check),
2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .agent import OnlineAgent, make_agent
from .config import Config, apply_override, load_config, parse_value
from .errors import ConfigError, FtlCrlError
from .experiment import (
    build_env,
    build_plan_params,
    build_schedule,
    check_config,
    evaluate,
    run_seed,
)
from .features import new_encoder
from .metrics import average_performance, regret
from .snapshot import load_snapshot

__all__ = ["main", "build_parser"]

log = logging.getLogger("ftlcrl")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ftlcrl", description="Continual model-based RL with a sparse FTL world model.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one agent through the task schedule")
    r.add_argument("--config", required=True, help="YAML config file")
    r.add_argument("--seed", type=int, help="run this seed instead of the config's seed list")
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.add_argument("--agent", choices=["oa", "dense", "finetune", "coreset"])
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    e = sub.add_parser("eval", help="re-evaluate a saved model snapshot on every task")
    e.add_argument("--snapshot", required=True)
    e.add_argument("--episodes", type=int, required=True)
    e.add_argument("--config", help="config file (default: config.yaml of the run directory)")
    e.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("verify", help="numerical checks of the sparse FTL theory")
    v.add_argument("--d-cap", type=int, default=64, help="largest feature dimension used by dense checks")
    v.add_argument("--json", help="write the machine-readable report here")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--inject-fault", action="store_true", help="drop the I/lambda term from the sparse solve")

    s = sub.add_parser("sweep", help="run the cartesian product of parameter values")
    s.add_argument("--config", required=True)
    s.add_argument("--param", action="append", default=[], metavar="KEY=V1,V2,...")
    s.add_argument("--out", help="sweep root directory (overrides output_dir)")
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return p


def _split_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"expected KEY=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    if not key:
        raise ConfigError(f"empty key in {text!r}")
    return key.strip(), value


def _summarise(cfg: Config, seed: int, out: Path, result) -> dict[str, Any]:
    last = result.metrics.records[-1]
    ap = average_performance(last)
    reg = regret(result.metrics)
    return {"agent": cfg.agent, "seed": seed, "out": str(out), "final_AP": ap, "regret": reg}


def _print_summary(row: dict[str, Any]) -> None:
    print(
        f"agent={row['agent']} seed={row['seed']} final AP={row['final_AP']:.4f} ({100 * row['final_AP']:.2f}%) "
        f"regret={row['regret']:.4f} ({100 * row['regret']:.2f}%) -> {row['out']}"
    )


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    for item in args.set:
        key, value = _split_assignment(item)
        cfg = apply_override(cfg, key, parse_value(value))
    if args.agent:
        cfg = apply_override(cfg, "agent", args.agent)
    if args.out:
        cfg = apply_override(cfg, "output_dir", args.out)
    if args.seed is not None:
        cfg = apply_override(cfg, "seeds", [args.seed])
    check_config(cfg)
    for seed in cfg.seeds:
        out = Path(cfg.output_dir) / f"seed_{seed}"
        result = run_seed(cfg, seed, out)
        _print_summary(_summarise(cfg, seed, out, result))
    return 0


def _find_config(snapshot: Path) -> Path:
    for parent in snapshot.resolve().parents:
        cand = parent / "config.yaml"
        if cand.exists():
            return cand
    raise ConfigError(f"no config.yaml found above {snapshot}; pass --config")


def cmd_eval(args: argparse.Namespace) -> int:
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    snap_path = Path(args.snapshot)
    cfg = load_config(args.config or _find_config(snap_path))
    check_config(cfg)
    snap = load_snapshot(snap_path)
    env = build_env(cfg)
    if snap.encoder.input_dim != env.state_dim + env.action_dim or snap.model.out_dim != env.state_dim:
        raise ConfigError("snapshot dimensions do not match the environment in the config")
    enc = new_encoder(snap.encoder)
    agent = make_agent("oa", enc, env.state_dim, build_plan_params(cfg, env), snap.model.lambda_inv)
    assert isinstance(agent, OnlineAgent)
    agent.model = snap.model
    agent.suff = snap.stats
    cap = build_schedule(cfg, env).episode_cap
    rng = np.random.default_rng(args.seed)
    rates = {}
    for tid in range(env.num_tasks):
        rates[tid], _ = evaluate(agent, env, env.task(tid), args.episodes, cap, rng)
        print(f"task {tid}: success {rates[tid]:.3f}")
    ap = float(np.mean(list(rates.values())))
    print(f"AP over all tasks: {ap:.4f} ({100 * ap:.2f}%)")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    from .verify import run_battery

    report = run_battery(args.d_cap, seed=args.seed, fault=args.inject_fault)
    print(report.render())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return 0 if report.ok else 1


def _sweep_job(job: tuple[dict[str, Any], int, str]) -> dict[str, Any]:
    data, seed, out = job
    from .config import config_from_dict

    cfg = config_from_dict(data)
    result = run_seed(cfg, seed, Path(out))
    return _summarise(cfg, seed, Path(out), result)


def _combo_name(keys: Sequence[str], values: Sequence[Any]) -> str:
    return "_".join(f"{k}={v}" for k, v in zip(keys, values)).replace("/", "-")


def cmd_sweep(args: argparse.Namespace) -> int:
    base = load_config(args.config)
    if args.out:
        base = apply_override(base, "output_dir", args.out)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    keys: list[str] = []
    grids: list[list[Any]] = []
    for item in args.param:
        key, values = _split_assignment(item)
        keys.append(key)
        grids.append([parse_value(v) for v in values.split(",")])
    jobs: list[tuple[dict[str, Any], int, str]] = []
    for combo in itertools.product(*grids):
        cfg = base
        for k, v in zip(keys, combo):
            cfg = apply_override(cfg, k, v)
        check_config(cfg)
        name = _combo_name(keys, combo) or "base"
        for seed in cfg.seeds:
            jobs.append((cfg.to_dict(), seed, str(Path(base.output_dir) / name / f"seed_{seed}")))
    if args.jobs == 1:
        rows = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    for row in rows:
        _print_summary(row)
    summary = Path(base.output_dir) / "sweep_summary.csv"
    summary.parent.mkdir(parents=True, exist_ok=True)
    with open(summary, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["out", "agent", "seed", "final_AP", "regret"], lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in writer.fieldnames})
    return 0


_COMMANDS = {"run": cmd_run, "eval": cmd_eval, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (FtlCrlError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
