"""Follow-the-leader ridge world model over sparse features.

The model predicts ``s' = s + phi([s, a]) @ W``.  It keeps the sufficient
statistics ``A = sum phi phi^T`` and ``B = sum phi y^T`` of every transition
seen so far and, after each transition, re-solves only the rows of ``W`` on
that transition's support ``s``::

    W_s = (A_ss + I / lam)^-1 (B_s - A_{s,~s} W_{~s})

which is the exact minimiser of the ridge objective with the other rows
held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import InputError, NumericalError
from .features import Encoder, SparseFeature

__all__ = [
    "SufficientStats",
    "WorldModel",
    "accumulate",
    "solve_active",
    "compute_cross_term",
    "predict",
    "predict_batch",
    "utilization",
    "dense_ridge_oracle",
    "DEFAULT_LAMBDA_INV",
    "DENSE_CAP",
]

DEFAULT_LAMBDA_INV = 0.005
DENSE_CAP = 4096

# pending outer products are merged into the CSR matrix once they would add
# roughly this many triples, or once this many features are waiting
_FLUSH_BUDGET = 2_000_000
_FLUSH_MAX_PENDING = 512


class SufficientStats:
    """Accumulated ``A = Phi^T Phi`` (sparse, symmetric) and ``B = Phi^T Y``.

    ``A`` is held as a row-sorted CSR matrix with both triangles stored,
    plus a short list of not-yet-merged features.  Reads see the sum of
    both; :meth:`flush` merges the list into the CSR matrix.
    """

    def __init__(self, dim: int, out_dim: int) -> None:
        self.dim = dim
        self.out_dim = out_dim
        self.B = np.zeros((dim, out_dim))
        self.count = 0
        self._csr = sp.csr_array((dim, dim), dtype=np.float64)
        self._pend_idx: list[np.ndarray] = []
        self._pend_val: list[np.ndarray] = []

    # -- construction ------------------------------------------------------
    @classmethod
    def from_parts(
        cls,
        dim: int,
        out_dim: int,
        rows: np.ndarray,
        cols: np.ndarray,
        vals: np.ndarray,
        B: np.ndarray,
        count: int,
    ) -> "SufficientStats":
        stats = cls(dim, out_dim)
        csr = sp.csr_array((vals, (rows, cols)), shape=(dim, dim))
        csr.sum_duplicates()
        csr.sort_indices()
        stats._csr = csr
        stats.B = np.array(B, dtype=np.float64).reshape(dim, out_dim)
        stats.count = int(count)
        return stats

    def copy(self) -> "SufficientStats":
        out = SufficientStats(self.dim, self.out_dim)
        out.B = self.B.copy()
        out.count = self.count
        out._csr = self._csr.copy()
        out._pend_idx = [i.copy() for i in self._pend_idx]
        out._pend_val = [v.copy() for v in self._pend_val]
        return out

    # -- updates -----------------------------------------------------------
    def add(self, indices: np.ndarray, values: np.ndarray, y: np.ndarray) -> None:
        self._pend_idx.append(np.asarray(indices, dtype=np.int64))
        self._pend_val.append(np.asarray(values, dtype=np.float64))
        self.B[indices] += np.outer(values, y)
        self.count += 1
        k = len(indices)
        n = len(self._pend_idx)
        if n * k * k >= _FLUSH_BUDGET or n >= _FLUSH_MAX_PENDING:
            self.flush()

    def flush(self) -> None:
        if not self._pend_idx:
            return
        idx = np.stack(self._pend_idx)
        val = np.stack(self._pend_val)
        k = idx.shape[1]
        rows = np.repeat(idx, k, axis=1).ravel()
        cols = np.tile(idx, (1, k)).ravel()
        vals = (val[:, :, None] * val[:, None, :]).ravel()
        new = sp.csr_array((vals, (rows, cols)), shape=(self.dim, self.dim))
        new.sum_duplicates()
        csr = self._csr + new
        csr.sum_duplicates()
        csr.sort_indices()
        self._csr = csr
        self._pend_idx.clear()
        self._pend_val.clear()

    # -- reads -------------------------------------------------------------
    @property
    def nnz(self) -> int:
        self.flush()
        return int(self._csr.nnz)

    def _pending_on(self, support: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pending features restricted to ``support`` as a dense ``(P, |s|)`` block."""
        idx = np.stack(self._pend_idx)
        val = np.stack(self._pend_val)
        pos = np.full(self.dim, -1, dtype=np.int64)
        pos[support] = np.arange(len(support))
        where = pos[idx]
        hit = where >= 0
        block = np.zeros((idx.shape[0], len(support)))
        r, c = np.nonzero(hit)
        block[r, where[r, c]] = val[r, c]
        return block, idx, val

    def block(self, support: np.ndarray) -> np.ndarray:
        """Dense ``A_ss``."""
        support = np.asarray(support, dtype=np.int64)
        out = self._csr[support][:, support].toarray()
        if self._pend_idx:
            block, _, _ = self._pending_on(support)
            out += block.T @ block
        return out

    def rows_times(self, support: np.ndarray, W: np.ndarray) -> np.ndarray:
        """``A_{s,:} @ W`` over all columns."""
        support = np.asarray(support, dtype=np.int64)
        out = np.asarray(self._csr[support] @ W)
        if self._pend_idx:
            block, idx, val = self._pending_on(support)
            proj = (val[:, :, None] * W[idx]).sum(axis=1)
            out = out + block.T @ proj
        return out

    def to_dense(self) -> np.ndarray:
        self.flush()
        return self._csr.toarray()

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(row, col, value)`` of ``A`` sorted lexicographically."""
        self.flush()
        coo = self._csr.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return (
            coo.row[order].astype(np.int64),
            coo.col[order].astype(np.int64),
            coo.data[order].astype(np.float64),
        )


@dataclass
class WorldModel:
    dim: int
    out_dim: int
    lambda_inv: float = DEFAULT_LAMBDA_INV
    W: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    active: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    regularize: bool = True

    def __post_init__(self) -> None:
        if not self.lambda_inv > 0:
            raise InputError(f"lambda_inv must be positive, got {self.lambda_inv}")
        if self.W is None:
            self.W = np.zeros((self.dim, self.out_dim))
        if self.active is None:
            self.active = np.zeros(self.dim, dtype=bool)

    def copy(self) -> "WorldModel":
        return WorldModel(
            self.dim, self.out_dim, self.lambda_inv, self.W.copy(), self.active.copy(), self.regularize
        )


def accumulate(stats: SufficientStats, phi: SparseFeature, y: np.ndarray) -> None:
    y = np.asarray(y, dtype=np.float64)
    if phi.dim != stats.dim:
        raise InputError(f"feature dim {phi.dim} != stats dim {stats.dim}")
    if y.shape != (stats.out_dim,):
        raise InputError(f"target shape {y.shape} != ({stats.out_dim},)")
    if not np.all(np.isfinite(y)):
        raise InputError("non-finite target")
    stats.add(phi.indices, phi.values, y)


def compute_cross_term(stats: SufficientStats, support: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``A_{s,~s} W_{~s}``: row products over columns outside the support."""
    support = np.asarray(support, dtype=np.int64)
    masked = W.copy()
    masked[support] = 0.0
    return stats.rows_times(support, masked)


def solve_active(model: WorldModel, stats: SufficientStats, support: np.ndarray) -> None:
    support = np.unique(np.asarray(support, dtype=np.int64))
    if support.size == 0:
        raise InputError("empty support")
    if support[0] < 0 or support[-1] >= model.dim:
        raise InputError("support index out of range")
    rhs = stats.B[support] - compute_cross_term(stats, support, model.W)
    lhs = stats.block(support)
    if model.regularize:
        lhs[np.diag_indices_from(lhs)] += model.lambda_inv
        try:
            factor = scipy.linalg.cho_factor(lhs, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"regularised block is not SPD: {exc}") from exc
        sol = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    else:
        # fault-injection path for negative controls: drops the ridge shift
        sol = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    if not np.all(np.isfinite(sol)):
        raise NumericalError("non-finite solution")
    model.W[support] = sol
    model.active[support] = True


def predict(model: WorldModel, enc: Encoder, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    return predict_batch(model.W, enc, s[None, :], a[None, :])[0]


def predict_batch(W: np.ndarray, enc: Encoder, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Vectorised one-step prediction for ``N`` state/action rows."""
    x = np.concatenate([s, a], axis=1)
    idx, val = enc.encode_batch(x)
    # (S, N, K) gather so the reduction runs over the contiguous last axis
    gathered = np.take(np.ascontiguousarray(W.T), idx, axis=1)
    return s + (gathered * val).sum(axis=-1).T


def utilization(model: WorldModel) -> float:
    return float(np.count_nonzero(model.active)) / model.dim


def dense_ridge_oracle(
    stats: SufficientStats, lambda_inv: float = DEFAULT_LAMBDA_INV, cap: int = DENSE_CAP
) -> np.ndarray:
    """``(A + I / lam)^-1 B`` by a dense SPD solve; verification use only."""
    if stats.dim > cap:
        raise InputError(f"dense oracle refused: D={stats.dim} exceeds cap {cap}")
    A = stats.to_dense()
    A[np.diag_indices_from(A)] += lambda_inv
    return scipy.linalg.solve(A, stats.B, assume_a="pos")
