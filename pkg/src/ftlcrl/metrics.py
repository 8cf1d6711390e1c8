"""Continual-RL metrics: average performance, regret, model MSE, CSV output."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

__all__ = [
    "EvalRecord",
    "MetricsLog",
    "average_performance",
    "scaled_average_performance",
    "regret",
    "regret_curve",
    "model_mse",
    "csv_header",
    "write_metrics_csv",
    "METRICS_SCHEMA_VERSION",
]

METRICS_SCHEMA_VERSION = 1


@dataclass
class EvalRecord:
    global_step: int
    tasks_seen: int
    per_task_success: dict[int, float]
    online_success: float

    def __post_init__(self) -> None:
        for p in list(self.per_task_success.values()) + [self.online_success]:
            if not 0.0 <= p <= 1.0:
                raise InputError(f"success rate {p} outside [0, 1]")


@dataclass
class MetricsLog:
    num_tasks: int
    records: list[EvalRecord] = field(default_factory=list)
    mse_per_task: list[dict[int, float]] = field(default_factory=list)
    utilization_curve: list[float] = field(default_factory=list)
    # task count used by AP_scaled; defaults to num_tasks
    scale_tasks: int | None = None

    def append(self, record: EvalRecord, mse: dict[int, float], util: float) -> None:
        if self.records:
            last = self.records[-1]
            if record.global_step <= last.global_step:
                raise InputError("evaluation records must have strictly increasing global_step")
            if record.tasks_seen < last.tasks_seen:
                raise InputError("tasks_seen must be non-decreasing")
        self.records.append(record)
        self.mse_per_task.append(dict(mse))
        self.utilization_curve.append(float(util))


def average_performance(record: EvalRecord) -> float:
    """Mean offline success over the tasks seen so far."""
    if not record.per_task_success:
        raise InputError("no seen tasks to average over")
    vals = [record.per_task_success[k] for k in sorted(record.per_task_success)]
    return float(np.mean(vals))


def scaled_average_performance(record: EvalRecord, total_tasks: int) -> float:
    """AP weighted by the share of tasks seen, ``AP * T_w / total_tasks``."""
    return average_performance(record) * record.tasks_seen / total_tasks


def _curve(records: Sequence[EvalRecord]) -> tuple[np.ndarray, np.ndarray]:
    w = np.array([r.global_step for r in records], dtype=np.float64)
    p = np.array([r.online_success for r in records], dtype=np.float64)
    return w, p


def regret(log: MetricsLog | Sequence[EvalRecord], w_end: float | None = None) -> float:
    """Normalised area above the online success curve up to ``w_end``.

    The curve is the piecewise-linear interpolation of ``online_success``
    between checkpoints, held constant at its first value on ``[0, w_0]``.
    """
    records = log.records if isinstance(log, MetricsLog) else list(log)
    if not records:
        raise InputError("regret needs at least one evaluation record")
    w, p = _curve(records)
    if w_end is None:
        w_end = float(w[-1])
    if w_end < w[0] or w_end <= 0:
        raise InputError(f"w_end={w_end} lies before the first record at w={w[0]}")
    if w_end > w[-1]:
        raise InputError(f"w_end={w_end} lies past the last record at w={w[-1]}")
    gap = 1.0 - p
    area = w[0] * gap[0]
    keep = w <= w_end
    wk, gk = w[keep], gap[keep]
    if wk[-1] < w_end:
        wk = np.append(wk, w_end)
        gk = np.append(gk, np.interp(w_end, w, gap))
    area += float(np.sum(0.5 * (gk[1:] + gk[:-1]) * np.diff(wk)))
    return float(np.clip(area / w_end, 0.0, 1.0))


def regret_curve(records: Sequence[EvalRecord]) -> list[float]:
    return [regret(records[: i + 1]) for i in range(len(records))]


def model_mse(predict_fn, transitions: Iterable) -> float:
    """Mean of ``||predict(s, a) - s'||^2 / S`` over a transition buffer."""
    items = list(transitions)
    if not items:
        raise InputError("model_mse needs a non-empty buffer")
    s = np.stack([t.s for t in items])
    a = np.stack([t.a for t in items])
    s_next = np.stack([t.s_next for t in items])
    pred = predict_fn(s, a)
    return float(np.mean(np.sum((pred - s_next) ** 2, axis=1) / s.shape[1]))


def csv_header(num_tasks: int) -> list[str]:
    return (
        ["w", "T_w"]
        + [f"p_task_{k}" for k in range(num_tasks)]
        + ["AP", "AP_scaled", "online_success", "regret_so_far", "utilization"]
        + [f"mse_task_{k}" for k in range(num_tasks)]
    )


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.8f}"


def write_metrics_csv(log: MetricsLog, path=None) -> str:
    """Render (and optionally write) the metrics table; returns the CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_header(log.num_tasks))
    regrets = regret_curve(log.records)
    for rec, mse, util, reg in zip(log.records, log.mse_per_task, log.utilization_curve, regrets):
        row = [str(rec.global_step), str(rec.tasks_seen)]
        row += [_fmt(rec.per_task_success.get(k)) for k in range(log.num_tasks)]
        row += [
            _fmt(average_performance(rec)),
            _fmt(scaled_average_performance(rec, log.scale_tasks or log.num_tasks)),
            _fmt(rec.online_success),
            _fmt(reg),
            _fmt(util),
        ]
        row += [_fmt(mse.get(k)) for k in range(log.num_tasks)]
        writer.writerow(row)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
