from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftlcrl.errors import InputError
from ftlcrl.metrics import (
    EvalRecord,
    MetricsLog,
    average_performance,
    csv_header,
    model_mse,
    regret,
    scaled_average_performance,
    write_metrics_csv,
)


def curve(ws, ps):
    return [EvalRecord(int(w), 1, {0: 1.0}, float(p)) for w, p in zip(ws, ps)]


@dataclass(frozen=True)
class Tr:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray


def test_ap_examples():
    assert average_performance(EvalRecord(1, 2, {0: 1.0, 1: 1.0}, 1.0)) == 1.0
    assert average_performance(EvalRecord(1, 2, {0: 1.0, 1: 0.0}, 1.0)) == 0.5
    with pytest.raises(InputError):
        average_performance(EvalRecord(1, 0, {}, 0.0))


def test_scaled_ap_six_tasks():
    rec = EvalRecord(10, 3, {0: 1.0, 1: 0.5, 2: 0.0}, 0.0)
    assert scaled_average_performance(rec, 6) == pytest.approx(0.5 * 3 / 6)


@settings(max_examples=50)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.randoms())
def test_ap_permutation_invariant_and_mean_preserving(ps, rnd):
    rec = EvalRecord(1, len(ps), dict(enumerate(ps)), 0.0)
    ap = average_performance(rec)
    perm = list(range(len(ps)))
    rnd.shuffle(perm)
    rec2 = EvalRecord(1, len(ps), {perm[i]: p for i, p in enumerate(ps)}, 0.0)
    assert average_performance(rec2) == pytest.approx(ap, abs=1e-12)
    rec3 = EvalRecord(1, len(ps) + 1, {**dict(enumerate(ps)), len(ps): ap}, 0.0)
    assert average_performance(rec3) == pytest.approx(ap, abs=1e-12)


def test_regret_oracle_fail_step():
    ws = np.arange(1, 101) * 10
    assert regret(curve(ws, np.ones(100))) == 0.0
    assert regret(curve(ws, np.zeros(100))) == 1.0
    # closed form for the step: area 0.5 * w_end, up to one grid cell of linear ramp
    ps = (ws > 500).astype(float)
    assert regret(curve(ws, ps)) == pytest.approx(0.5, abs=10 / 1000)


def test_regret_errors_and_single_record():
    with pytest.raises(InputError):
        regret([])
    recs = curve([10, 20], [0.0, 1.0])
    with pytest.raises(InputError):
        regret(recs, w_end=5)
    with pytest.raises(InputError):
        regret(recs, w_end=30)
    assert regret(curve([10], [0.25])) == pytest.approx(0.75)


def test_regret_partial_window_interpolates():
    recs = curve([10, 20], [0.0, 1.0])
    # gap: 1 on [0,10], linear 1 -> 0.5 on [10, 15]
    assert regret(recs, w_end=15) == pytest.approx((10 + 5 * 0.75) / 15)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=20))
def test_regret_monotone_in_success(pairs):
    lo = [min(a, b) for a, b in pairs]
    hi = [max(a, b) for a, b in pairs]
    ws = np.arange(1, len(pairs) + 1) * 7
    r_lo, r_hi = regret(curve(ws, lo)), regret(curve(ws, hi))
    assert 0.0 <= r_hi <= r_lo + 1e-12 <= 1.0 + 1e-12


def test_regret_grid_refinement_bound():
    rng = np.random.default_rng(0)
    ws = np.arange(1, 41) * 5
    ps = rng.uniform(0, 1, 40)
    fine = regret(curve(ws, ps))
    coarse = regret(curve(ws[1::2], ps[1::2]))
    assert abs(fine - coarse) <= np.max(np.abs(np.diff(ps))) + 1e-12


def test_model_mse_cases():
    rng = np.random.default_rng(1)
    buf = [Tr(rng.normal(size=3), rng.normal(size=1), rng.normal(size=3)) for _ in range(20)]
    zero = model_mse(lambda s, a: s, buf)
    ref = np.mean([np.sum((t.s_next - t.s) ** 2) / 3 for t in buf])
    assert zero == pytest.approx(ref, abs=1e-12)
    assert model_mse(lambda s, a: np.stack([t.s_next for t in buf]), buf) == 0.0
    assert zero >= 0
    with pytest.raises(InputError):
        model_mse(lambda s, a: s, [])


def test_metrics_log_ordering():
    log = MetricsLog(2)
    log.append(EvalRecord(5, 1, {0: 1.0}, 1.0), {}, 0.1)
    with pytest.raises(InputError):
        log.append(EvalRecord(5, 1, {0: 1.0}, 1.0), {}, 0.1)
    with pytest.raises(InputError):
        log.append(EvalRecord(6, 0, {0: 1.0}, 1.0), {}, 0.1)
    with pytest.raises(InputError):
        EvalRecord(1, 1, {0: 1.5}, 0.0)


def test_csv_columns_and_formatting():
    log = MetricsLog(2)
    log.append(EvalRecord(5, 1, {0: 1.0}, 0.5), {0: 0.25}, 0.1)
    log.append(EvalRecord(9, 2, {0: 1.0, 1: 0.0}, 1.0), {0: 0.25, 1: 0.5}, 0.2)
    text = write_metrics_csv(log)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == csv_header(2)
    assert rows[0] == [
        "w", "T_w", "p_task_0", "p_task_1", "AP", "AP_scaled", "online_success",
        "regret_so_far", "utilization", "mse_task_0", "mse_task_1",
    ]
    assert rows[1][3] == "" and rows[1][-1] == ""
    assert rows[2][4] == "0.50000000"
    assert rows[2][5] == "0.50000000"
    assert write_metrics_csv(log) == text
