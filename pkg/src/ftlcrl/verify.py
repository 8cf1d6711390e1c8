"""Numerical checks of the sparse follow-the-leader theory.

Everything here works on recorded streams of sparse features ``phi_t`` and
targets ``y_t``.  The per-sample loss is the trace form

    f_t(W) = Tr(W^T phi phi^T W) + Tr(y^T y) - 2 Tr(W^T phi y^T)

and regret compares the prequential losses of the sparse iterates with a
fixed comparator ``xi`` (by default the batch ridge solution).  Dense
diagnostics (``Delta_t``, ``r_M``, the assumption checks) need ``D x D``
algebra and refuse to run above ``dense_cap``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg

from .errors import InputError, NumericalError
from .features import EncoderConfig, SparseFeature, new_encoder
from .world_model import (
    SufficientStats,
    WorldModel,
    accumulate,
    dense_ridge_oracle,
    solve_active,
)

__all__ = [
    "TheoryTrace",
    "GapDiagnostics",
    "AssumptionReport",
    "Check",
    "VerifyReport",
    "loss_f",
    "losses_at",
    "batch_ridge_dense",
    "run_sparse_trace",
    "cumulative_regret",
    "schur_block_inverse",
    "sparse_minimizer_residual",
    "assumption_diagnostics",
    "gap_bound_report",
    "ftl_lemma_gap",
    "random_stream",
    "run_battery",
    "REPORT_SCHEMA",
    "DEFAULT_DENSE_CAP",
]

log = logging.getLogger(__name__)

DEFAULT_DENSE_CAP = 256
_SINGULAR_COND = 1e12


# ---------------------------------------------------------------------------
# losses and traces


def loss_f(W: np.ndarray, phi: SparseFeature | np.ndarray, y: np.ndarray) -> float:
    """Trace-form squared loss of one sample; equals ``||phi^T W - y^T||^2``."""
    y = np.asarray(y, dtype=np.float64)
    if isinstance(phi, SparseFeature):
        if phi.dim != W.shape[0]:
            raise InputError(f"feature dim {phi.dim} != W rows {W.shape[0]}")
        z = phi.values @ W[phi.indices]
    else:
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (W.shape[0],):
            raise InputError(f"feature shape {phi.shape} != ({W.shape[0]},)")
        z = phi @ W
    if y.shape != (W.shape[1],):
        raise InputError(f"target shape {y.shape} != ({W.shape[1]},)")
    return float(z @ z + y @ y - 2.0 * (z @ y))


def losses_at(W: np.ndarray, idx: np.ndarray, val: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """``f_t(W)`` for every sample of a stream, vectorised."""
    z = (val[:, :, None] * W[idx]).sum(axis=1)
    return np.sum(z * z, axis=1) + np.sum(ys * ys, axis=1) - 2.0 * np.sum(z * ys, axis=1)


def _dense_stats(idx: np.ndarray, val: np.ndarray, ys: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray]:
    A = np.zeros((dim, dim))
    B = np.zeros((dim, ys.shape[1]))
    for i, v, y in zip(idx, val, ys):
        A[np.ix_(i, i)] += np.outer(v, v)
        B[i] += np.outer(v, y)
    return A, B


def batch_ridge_dense(
    idx: np.ndarray, val: np.ndarray, ys: np.ndarray, dim: int, lambda_inv: float, cap: int = 4096
) -> np.ndarray:
    """Batch ridge minimiser built from scratch with dense algebra."""
    if dim > cap:
        raise InputError(f"dense solve refused: D={dim} exceeds cap {cap}")
    A, B = _dense_stats(idx, val, ys, dim)
    A[np.diag_indices_from(A)] += lambda_inv
    return scipy.linalg.solve(A, B, assume_a="pos")


@dataclass
class TheoryTrace:
    """A recorded stream and the prequential losses of a learner on it.

    ``losses[t]`` is ``f_t`` evaluated at the weights held *before* sample
    ``t`` was seen.
    """

    dim: int
    lambda_inv: float
    idx: np.ndarray
    val: np.ndarray
    ys: np.ndarray
    losses: np.ndarray
    iterates: list[np.ndarray] | None = None
    xi: np.ndarray | None = None
    c_W: float = 0.0
    residuals: np.ndarray | None = None

    def __post_init__(self) -> None:
        T = len(self.losses)
        if not (len(self.idx) == len(self.val) == len(self.ys) == T):
            raise InputError("trace arrays have inconsistent lengths")
        if self.iterates is not None and len(self.iterates) != T:
            raise InputError("iterates must hold one matrix per step")
        if not np.isfinite(self.c_y) or not np.isfinite(self.c_W):
            raise InputError("trace constants must be finite")

    @property
    def T(self) -> int:
        return len(self.losses)

    @property
    def K(self) -> int:
        return int(self.idx.shape[1])

    @property
    def c_y(self) -> float:
        return float(np.max(np.linalg.norm(self.ys, axis=1))) if len(self.ys) else 0.0

    @classmethod
    def from_iterates(
        cls, iterates: list[np.ndarray], idx: np.ndarray, val: np.ndarray, ys: np.ndarray, lambda_inv: float
    ) -> "TheoryTrace":
        losses = np.array([losses_at(W, i[None], v[None], y[None])[0] for W, i, v, y in zip(iterates, idx, val, ys)])
        c_W = max((float(np.linalg.norm(W)) for W in iterates), default=0.0)
        return cls(iterates[0].shape[0], lambda_inv, idx, val, ys, losses, list(iterates), c_W=c_W)


def run_sparse_trace(
    idx: np.ndarray,
    val: np.ndarray,
    ys: np.ndarray,
    dim: int,
    lambda_inv: float,
    *,
    regularize: bool = True,
    store_iterates: bool = False,
    check_residual: bool = False,
) -> TheoryTrace:
    """Run the sparse FTL update over a stream and record its trace."""
    idx = np.asarray(idx, dtype=np.int64)
    val = np.asarray(val, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    stats = SufficientStats(dim, ys.shape[1])
    model = WorldModel(dim, ys.shape[1], lambda_inv, regularize=regularize)
    losses = np.empty(len(ys))
    residuals = np.empty(len(ys)) if check_residual else None
    iterates: list[np.ndarray] | None = [] if store_iterates else None
    c_W = 0.0
    for t, (i, v, y) in enumerate(zip(idx, val, ys)):
        z = v @ model.W[i]
        losses[t] = z @ z + y @ y - 2.0 * (z @ y)
        if iterates is not None:
            iterates.append(model.W.copy())
        c_W = max(c_W, float(np.linalg.norm(model.W)))
        accumulate(stats, SparseFeature(dim, i, v), y)
        solve_active(model, stats, i)
        if residuals is not None:
            residuals[t] = sparse_minimizer_residual(stats, i, model.W, lambda_inv)
    c_W = max(c_W, float(np.linalg.norm(model.W)))
    return TheoryTrace(dim, lambda_inv, idx, val, ys, losses, iterates, c_W=c_W, residuals=residuals)


def cumulative_regret(trace: TheoryTrace, T: int | None = None, xi: np.ndarray | None = None) -> float:
    """``sum_t f_t(W_t) - sum_t f_t(xi)`` over the first ``T`` steps.

    Without an explicit comparator the trace's ``xi`` is used, and failing
    that the batch ridge solution over the same ``T`` steps.
    """
    T = trace.T if T is None else int(T)
    if not 1 <= T <= trace.T:
        raise InputError(f"T={T} outside [1, {trace.T}]")
    idx, val, ys = trace.idx[:T], trace.val[:T], trace.ys[:T]
    if xi is None:
        xi = trace.xi if (trace.xi is not None and T == trace.T) else batch_ridge_dense(
            idx, val, ys, trace.dim, trace.lambda_inv
        )
    return float(np.sum(trace.losses[:T]) - np.sum(losses_at(xi, idx, val, ys)))


# ---------------------------------------------------------------------------
# linear-algebra lemmas


def schur_block_inverse(M11: np.ndarray, M12: np.ndarray, M21: np.ndarray, M22: np.ndarray) -> np.ndarray:
    """Inverse of ``[[M11, M12], [M21, M22]]`` through the Schur complement of ``M11``."""
    M11, M12, M21, M22 = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (M11, M12, M21, M22))
    n1, n2 = M11.shape[0], M22.shape[0]
    if M11.shape != (n1, n1) or M22.shape != (n2, n2) or M12.shape != (n1, n2) or M21.shape != (n2, n1):
        raise InputError("block shapes do not tile a square matrix")
    c11 = np.linalg.cond(M11)
    if not np.isfinite(c11) or c11 > _SINGULAR_COND:
        raise NumericalError(f"M11 is singular or ill-conditioned (cond={c11:.3e}, limit {_SINGULAR_COND:.0e})")
    M11_inv = np.linalg.inv(M11)
    S = M22 - M21 @ M11_inv @ M12
    cs = np.linalg.cond(S)
    if not np.isfinite(cs) or cs > _SINGULAR_COND:
        raise NumericalError(
            f"Schur complement is singular or ill-conditioned (cond(S)={cs:.3e}, cond(M11)={c11:.3e})"
        )
    S_inv = np.linalg.inv(S)
    top_right = -M11_inv @ M12 @ S_inv
    bottom_left = -S_inv @ M21 @ M11_inv
    top_left = M11_inv + M11_inv @ M12 @ S_inv @ M21 @ M11_inv
    return np.block([[top_left, top_right], [bottom_left, S_inv]])


def sparse_minimizer_residual(
    stats: SufficientStats, support: np.ndarray, W: np.ndarray, lambda_inv: float
) -> float:
    """Frobenius norm of the gradient of the ridge objective restricted to ``W_s``:

    ``2 (A_ss + I/lam) W_s + 2 A_{s,~s} W_{~s} - 2 B_s``.
    """
    support = np.unique(np.asarray(support, dtype=np.int64))
    grad = 2.0 * (stats.rows_times(support, W) + lambda_inv * W[support] - stats.B[support])
    return float(np.linalg.norm(grad))


def ftl_lemma_gap(
    idx: np.ndarray, val: np.ndarray, ys: np.ndarray, dim: int, lambda_inv: float, comparators: list[np.ndarray]
) -> float:
    """Be-the-leader check with the regulariser as loss zero.

    Returns ``max_xi [sum_{t>=0} f_t(W_{t+1}) - sum_{t>=0} f_t(xi)]`` where
    ``f_0 = ||.||_F^2 / lam`` and ``W_{t+1}`` is the ridge minimiser after
    ``t`` samples; the lemma says this is never positive.
    """
    if dim > 4096:
        raise InputError("dense FTL sequence refused above D=4096")
    A = np.eye(dim) * lambda_inv
    B = np.zeros((dim, ys.shape[1]))
    lhs = 0.0  # f_0(W_1) with W_1 = 0
    for i, v, y in zip(idx, val, ys):
        A[np.ix_(i, i)] += np.outer(v, v)
        B[i] += np.outer(v, y)
        W_next = scipy.linalg.solve(A, B, assume_a="pos")
        lhs += losses_at(W_next, i[None], v[None], y[None])[0]
    gaps = [
        lhs - (lambda_inv * float(np.sum(xi * xi)) + float(np.sum(losses_at(xi, idx, val, ys))))
        for xi in comparators
    ]
    return float(max(gaps))


# ---------------------------------------------------------------------------
# assumption and gap diagnostics


def _spec_norm_sym(M: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(M)
    return float(max(abs(ev[0]), abs(ev[-1])))


def _require_small(dim: int, cap: int) -> None:
    if dim > cap:
        raise InputError(f"dense diagnostics refused: D={dim} exceeds dense cap {cap}")


@dataclass
class AssumptionReport:
    lhs1: np.ndarray  # per step: max over probes of ||phi phi^T - A_t / t||_2
    rhs1: np.ndarray  # per step: 1 / (lam t)
    lambda_max: np.ndarray  # largest lam with lhs1 <= 1 / (lam t)
    k_bound: np.ndarray  # per step right-hand side of the K condition (capped at D)
    K: int
    y_negative_fraction: float
    lhs1_slope: float  # log-log slope of lhs1 against t (nan if undefined)

    def summary(self) -> dict[str, Any]:
        return {
            "assumption1_max_lhs_times_t": float(np.max(self.lhs1 * np.arange(1, len(self.lhs1) + 1))),
            "assumption1_holds_fraction": float(np.mean(self.lhs1 <= self.rhs1 + 1e-15)),
            "assumption1_feasible_lambda_min": float(np.min(self.lambda_max)),
            "assumption1_lhs_loglog_slope": self.lhs1_slope,
            "assumption3_k_bound_max": float(np.max(self.k_bound)),
            "assumption3_holds_fraction": float(np.mean(self.K >= self.k_bound)),
            "assumption2_negative_target_fraction": self.y_negative_fraction,
        }


def assumption_diagnostics(
    idx: np.ndarray,
    val: np.ndarray,
    ys: np.ndarray,
    dim: int,
    lambda_inv: float,
    probes: tuple[np.ndarray, np.ndarray] | None = None,
    *,
    dense_cap: int = DEFAULT_DENSE_CAP,
) -> AssumptionReport:
    """Empirical sides of the stability and sparsity assumptions; reported, never asserted.

    The supremum over inputs is approximated by a maximum over ``probes``
    (default: every input of the stream).
    """
    _require_small(dim, dense_cap)
    if probes is None:
        probes = (idx, val)
    P = np.zeros((len(probes[0]), dim))
    for r, (i, v) in enumerate(zip(*probes)):
        P[r, i] = v
    c_y = float(np.max(np.linalg.norm(ys, axis=1)))
    A = np.zeros((dim, dim))
    T = len(ys)
    lhs1 = np.empty(T)
    k_bound = np.empty(T)
    trace_sum = 0.0
    for t, (i, v) in enumerate(zip(idx, val), start=1):
        A[np.ix_(i, i)] += np.outer(v, v)
        trace_sum += float(v @ v)
        mean = A / t
        lhs1[t - 1] = max(_spec_norm_sym(np.outer(p, p) - mean) for p in P)
        s = np.unique(i)
        rest = np.setdiff1d(np.arange(dim), s)
        Ass = A[np.ix_(s, s)] + lambda_inv * np.eye(len(s))
        cross = A[np.ix_(rest, s)] @ np.linalg.inv(Ass) if len(rest) else np.zeros((0, len(s)))
        cross_norm = float(np.linalg.norm(cross, 2)) if cross.size else 0.0
        bound = c_y**2 * (trace_sum / float(v @ v) + 1.0) * np.sqrt(cross_norm**2 + 1.0)
        k_bound[t - 1] = min(float(dim), bound)
    steps = np.arange(1, T + 1)
    rhs1 = lambda_inv / steps
    with np.errstate(divide="ignore"):
        lambda_max = np.where(lhs1 > 0, 1.0 / (steps * lhs1), np.inf)
    good = lhs1 > 0
    slope = float(np.polyfit(np.log(steps[good]), np.log(lhs1[good]), 1)[0]) if good.sum() >= 2 else float("nan")
    return AssumptionReport(
        lhs1=lhs1,
        rhs1=rhs1,
        lambda_max=lambda_max,
        k_bound=k_bound,
        K=int(idx.shape[1]),
        y_negative_fraction=float(np.mean(ys < 0)),
        lhs1_slope=slope,
    )


@dataclass
class GapDiagnostics:
    """Per-step comparison of the dense and sparse FTL updates.

    ``gaps[t]`` is the largest entry of ``W_{t+1} - W~_{t+1} - K r_M Delta_t``;
    the ordering claim holds entrywise where it is ``<= 0``.
    """

    deltas: list[np.ndarray]
    r_per_step: np.ndarray
    r_M: float
    gaps: np.ndarray
    assumption1_margin: np.ndarray
    K: int

    def summary(self) -> dict[str, Any]:
        return {
            "r_M": self.r_M,
            "gap_max": float(np.max(self.gaps)),
            "gap_nonpositive_fraction": float(np.mean(self.gaps <= 1e-12)),
            "assumption1_margin_min": float(np.min(self.assumption1_margin)),
        }


def gap_bound_report(
    idx: np.ndarray,
    val: np.ndarray,
    ys: np.ndarray,
    dim: int,
    lambda_inv: float,
    *,
    dense_cap: int = DEFAULT_DENSE_CAP,
) -> GapDiagnostics:
    """Dense-versus-sparse one-step gap against ``K r_M Delta_t`` (diagnostic).

    At step ``t`` the sparse iterate is the support update applied to the
    dense iterate ``W_t``: rows off the support keep ``W_t``, rows on it are
    re-solved.  ``r_M`` uses the spectral norm of
    ``(A_ss + I/lam + M)(A_ss + I/lam - M)^-1`` at the current support.
    """
    _require_small(dim, dense_cap)
    S = ys.shape[1]
    A = np.zeros((dim, dim))
    B = np.zeros((dim, S))
    W = np.zeros((dim, S))
    eye = np.eye(dim)
    deltas: list[np.ndarray] = []
    r_steps: list[float] = []
    diffs: list[np.ndarray] = []
    margins: list[float] = []
    K = int(idx.shape[1])
    for t, (i, v, y) in enumerate(zip(idx, val, ys), start=1):
        A[np.ix_(i, i)] += np.outer(v, v)
        B[i] += np.outer(v, y)
        reg = A + lambda_inv * eye
        W_next = scipy.linalg.solve(reg, B, assume_a="pos")
        phi = np.zeros(dim)
        phi[i] = v
        deltas.append(scipy.linalg.solve(reg, np.outer(phi, y), assume_a="pos"))
        s = np.unique(i)
        rest = np.setdiff1d(np.arange(dim), s)
        Ass = reg[np.ix_(s, s)]
        if len(rest):
            Asr = A[np.ix_(s, rest)]
            M = Asr @ scipy.linalg.solve(reg[np.ix_(rest, rest)], Asr.T, assume_a="pos")
            cross = Asr @ W[rest]
        else:
            M = np.zeros_like(Ass)
            cross = np.zeros((len(s), S))
        ratio = (Ass + M) @ np.linalg.inv(Ass - M)
        r_steps.append(float(np.linalg.norm(ratio, 2)))
        W_sparse = W.copy()
        W_sparse[s] = scipy.linalg.solve(Ass, B[s] - cross, assume_a="pos")
        diffs.append(W_next - W_sparse)
        margins.append(lambda_inv / t - _spec_norm_sym(np.outer(phi, phi) - A / t))
        W = W_next
    r_M = float(max(r_steps)) if r_steps else 1.0
    gaps = np.array([float(np.max(d - K * r_M * dl)) for d, dl in zip(diffs, deltas)])
    return GapDiagnostics(deltas, np.array(r_steps), r_M, gaps, np.array(margins), K)


# ---------------------------------------------------------------------------
# synthetic streams


# (num_tiles, grid_dim, bins) giving D <= 64 with a spread of K
_SMALL_ENCODERS = [
    (4, 1, 16),
    (2, 2, 4),
    (1, 2, 8),
    (3, 2, 4),
    (8, 1, 8),
    (16, 1, 4),
    (4, 2, 4),
]


def random_stream(
    rng: np.random.Generator,
    T: int,
    *,
    encoder: tuple[int, int, int] | None = None,
    input_dim: int = 3,
    out_dim: int = 2,
    noise: float = 0.05,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Encoded inputs and bounded targets ``y = tanh(x U) + noise``.

    Returns ``(idx, val, ys, D)``.
    """
    tiles, grid, bins = encoder if encoder is not None else _SMALL_ENCODERS[int(rng.integers(len(_SMALL_ENCODERS)))]
    cfg = EncoderConfig(input_dim, tiles, grid, bins, seed=int(rng.integers(2**63)))
    enc = new_encoder(cfg)
    xs = rng.uniform(-2.0, 2.0, size=(T, input_dim))
    U = rng.normal(size=(input_dim, out_dim))
    ys = np.tanh(xs @ U) + noise * rng.normal(size=(T, out_dim))
    idx, val = enc.encode_batch(xs)
    return idx, val, ys, cfg.dim


# ---------------------------------------------------------------------------
# battery


@dataclass
class Check:
    name: str
    value: float
    threshold: float | None
    status: str  # "pass", "fail" or "diagnostic"
    hard: bool
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "value": _json_float(self.value),
            "threshold": None if self.threshold is None else _json_float(self.threshold),
            "status": self.status,
            "hard": self.hard,
            "detail": self.detail,
        }


def _json_float(x: float) -> float | str:
    x = float(x)
    if np.isfinite(x):
        return x
    return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")


@dataclass
class VerifyReport:
    checks: list[Check] = field(default_factory=list)
    d_cap: int = DEFAULT_DENSE_CAP
    fault_injected: bool = False
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return all(c.status != "fail" for c in self.checks if c.hard)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": 1,
            "ok": self.ok,
            "d_cap": self.d_cap,
            "fault_injected": self.fault_injected,
            "seconds": round(self.seconds, 3),
            "checks": [c.to_dict() for c in self.checks],
        }

    def render(self) -> str:
        lines = []
        for c in self.checks:
            thr = "" if c.threshold is None else f" (threshold {c.threshold:.3g})"
            lines.append(f"[{c.status.upper():10s}] {c.name}: {c.value:.6g}{thr}{' ' + c.detail if c.detail else ''}")
        lines.append(f"overall: {'PASS' if self.ok else 'FAIL'} in {self.seconds:.1f}s")
        return "\n".join(lines)


REPORT_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "ok", "d_cap", "fault_injected", "checks"],
    "properties": {
        "schema_version": {"const": 1},
        "ok": {"type": "boolean"},
        "d_cap": {"type": "integer", "minimum": 1},
        "fault_injected": {"type": "boolean"},
        "seconds": {"type": "number", "minimum": 0},
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "value", "threshold", "status", "hard"],
                "properties": {
                    "name": {"type": "string"},
                    "value": {"type": ["number", "string"]},
                    "threshold": {"type": ["number", "string", "null"]},
                    "status": {"enum": ["pass", "fail", "diagnostic"]},
                    "hard": {"type": "boolean"},
                    "detail": {"type": "string"},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def _hard(name: str, value: float, threshold: float, detail: str = "") -> Check:
    ok = bool(np.isfinite(value) and value <= threshold)
    return Check(name, value, threshold, "pass" if ok else "fail", True, detail)


def _diag(name: str, value: float, detail: str = "") -> Check:
    return Check(name, value, None, "diagnostic", False, detail)


def run_battery(d_cap: int = 64, *, seed: int = 0, fault: bool = False, lambda_inv: float = 0.005) -> VerifyReport:
    """Run every theory check at small ``D``.

    With ``fault`` set the sparse solve drops its ``I/lam`` term, which the
    hard checks must catch.
    """
    if d_cap < 4:
        raise InputError(f"d_cap must be at least 4, got {d_cap}")
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    report = VerifyReport(d_cap=min(d_cap, DEFAULT_DENSE_CAP), fault_injected=fault)
    encoders = [e for e in _SMALL_ENCODERS if e[0] * e[2] ** e[1] <= d_cap] or [(1, 1, max(2, d_cap))]

    # loss identity
    worst = 0.0
    for _ in range(100):
        D, S = int(rng.integers(2, 20)), int(rng.integers(1, 5))
        W, phi, y = rng.normal(size=(D, S)), rng.normal(size=D), rng.normal(size=S)
        worst = max(worst, abs(loss_f(W, phi, y) - float(np.sum((phi @ W - y) ** 2))))
    report.checks.append(_hard("loss_identity", worst, 1e-12))

    # dense equivalence: full-support solve against the dense oracle
    worst = 0.0
    for k in range(10):
        idx, val, ys, D = random_stream(rng, 50, encoder=encoders[k % len(encoders)])
        stats = SufficientStats(D, ys.shape[1])
        model = WorldModel(D, ys.shape[1], lambda_inv, regularize=not fault)
        full = np.arange(D)
        for t in range(len(ys)):
            accumulate(stats, SparseFeature(D, idx[t], val[t]), ys[t])
            solve_active(model, stats, full)
            ref = dense_ridge_oracle(stats, lambda_inv)
            worst = max(worst, float(np.max(np.abs(model.W - ref))))
    report.checks.append(_hard("dense_equivalence", worst, 1e-8, "10 streams x 50 steps"))

    # sparse minimiser residual after every update
    idx, val, ys, D = random_stream(rng, 300, encoder=encoders[0])
    trace = run_sparse_trace(idx, val, ys, D, lambda_inv, regularize=not fault, check_residual=True)
    assert trace.residuals is not None
    report.checks.append(_hard("minimizer_residual", float(np.max(trace.residuals)), 1e-8, "300-step stream"))

    # Schur block inverse
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(3, 16))
        n1 = int(rng.integers(1, n))
        G = rng.normal(size=(n, n))
        M = G @ G.T + n * np.eye(n)
        inv = schur_block_inverse(M[:n1, :n1], M[:n1, n1:], M[n1:, :n1], M[n1:, n1:])
        worst = max(worst, float(np.max(np.abs(inv - np.linalg.inv(M)))))
    report.checks.append(_hard("schur_block_inverse", worst, 1e-8, "20 random SPD matrices"))

    # be-the-leader lemma against random comparators
    idx, val, ys, D = random_stream(rng, 40, encoder=encoders[-1])
    xi_star = batch_ridge_dense(idx, val, ys, D, lambda_inv)
    comps = [xi_star] + [xi_star + rng.normal(scale=s, size=xi_star.shape) for s in (1e-3, 1e-2, 1e-1, 1.0) for _ in range(5)]
    gap = ftl_lemma_gap(idx, val, ys, D, lambda_inv, comps)
    report.checks.append(_hard("ftl_lemma", gap, 1e-9, "21 comparators around the batch minimiser"))

    # regret growth on a longer stream (shape only)
    idx, val, ys, D = random_stream(rng, 4000, encoder=(4, 1, 16), input_dim=2)
    trace = run_sparse_trace(idx, val, ys, D, lambda_inv, regularize=not fault)
    r_small = cumulative_regret(trace, 400) / (np.log(400) + 1)
    r_big = cumulative_regret(trace, 4000) / (np.log(4000) + 1)
    report.checks.append(_diag("regret_ratio_4000_vs_400", r_big / r_small, "Regret(T)/(log T + 1) ratio"))

    # diagnostics (D within the dense cap)
    idx, val, ys, D = random_stream(rng, 60, encoder=encoders[0])
    if D <= report.d_cap:
        ar = assumption_diagnostics(idx, val, ys, D, lambda_inv, dense_cap=report.d_cap)
        for key, value in ar.summary().items():
            report.checks.append(_diag(key, value))
        gd = gap_bound_report(idx, val, ys, D, lambda_inv, dense_cap=report.d_cap)
        for key, value in gd.summary().items():
            report.checks.append(_diag(key, value))
    report.seconds = time.perf_counter() - start
    return report
