from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftlcrl.errors import InputError
from ftlcrl.features import EncoderConfig, SparseFeature, new_encoder
from ftlcrl.world_model import (
    SufficientStats,
    WorldModel,
    accumulate,
    compute_cross_term,
    dense_ridge_oracle,
    predict,
    predict_batch,
    solve_active,
    utilization,
)

LAM_INV = 0.005


def random_feature(rng, D, K):
    idx = np.sort(rng.choice(D, size=K, replace=False))
    return SparseFeature(D, idx, rng.uniform(0, 1, size=K))


def stream(rng, T, D=32, K=8, S=2):
    return [(random_feature(rng, D, K), rng.normal(size=S)) for _ in range(T)]


def dense_AB(data, D, S):
    A, B = np.zeros((D, D)), np.zeros((D, S))
    for phi, y in data:
        d = phi.to_dense()
        A += np.outer(d, d)
        B += np.outer(d, y)
    return A, B


def test_single_rank_one_update():
    phi = SparseFeature(6, np.array([1, 4]), np.array([0.3, 0.7]))
    stats = SufficientStats(6, 2)
    accumulate(stats, phi, np.array([1.0, -2.0]))
    d = phi.to_dense()
    assert np.array_equal(stats.to_dense(), np.outer(d, d))
    assert np.array_equal(stats.B, np.outer(d, [1.0, -2.0]))
    assert stats.count == 1


def test_nnz_bound_and_dense_reconstruction():
    rng = np.random.default_rng(0)
    D, K = 40, 6
    data = stream(rng, 30, D, K)
    stats = SufficientStats(D, 2)
    for t, (phi, y) in enumerate(data, start=1):
        accumulate(stats, phi, y)
        assert stats.nnz <= t * K * K
    A, B = dense_AB(data, D, 2)
    assert np.max(np.abs(stats.to_dense() - A)) <= 1e-12
    assert np.max(np.abs(stats.B - B)) <= 1e-12
    assert np.array_equal(stats.to_dense(), stats.to_dense().T)
    assert np.linalg.eigvalsh(stats.to_dense()).min() > -1e-10


def test_pending_and_flushed_reads_agree():
    rng = np.random.default_rng(1)
    D = 30
    data = stream(rng, 25, D, 5)
    stats = SufficientStats(D, 2)
    for phi, y in data:
        accumulate(stats, phi, y)
    s = np.array([0, 3, 7, 19])
    W = rng.normal(size=(D, 2))
    before = (stats.block(s), stats.rows_times(s, W))
    stats.flush()
    after = (stats.block(s), stats.rows_times(s, W))
    assert np.allclose(before[0], after[0], atol=1e-13)
    assert np.allclose(before[1], after[1], atol=1e-13)


def test_accumulate_rejects_bad_input():
    stats = SufficientStats(5, 2)
    with pytest.raises(InputError):
        accumulate(stats, SparseFeature(6, np.array([0]), np.array([1.0])), np.zeros(2))
    with pytest.raises(InputError):
        accumulate(stats, SparseFeature(5, np.array([0]), np.array([1.0])), np.zeros(3))
    with pytest.raises(InputError):
        accumulate(stats, SparseFeature(5, np.array([0]), np.array([1.0])), np.array([np.inf, 0]))


def test_dense_support_recovers_ridge_solution():
    rng = np.random.default_rng(2)
    D, S = 24, 3
    data = stream(rng, 40, D, 6, S)
    stats = SufficientStats(D, S)
    model = WorldModel(D, S, LAM_INV)
    for phi, y in data:
        accumulate(stats, phi, y)
        solve_active(model, stats, np.arange(D))
    A, B = dense_AB(data, D, S)
    ref = np.linalg.solve(A + LAM_INV * np.eye(D), B)
    assert np.max(np.abs(model.W - ref)) <= 1e-8
    assert np.max(np.abs(dense_ridge_oracle(stats, LAM_INV) - ref)) <= 1e-8


def test_zero_stats_solve_gives_zero():
    model = WorldModel(8, 2, LAM_INV)
    model.W[:] = 5.0
    solve_active(model, SufficientStats(8, 2), np.array([1, 2]))
    assert np.all(model.W[[1, 2]] == 0.0)
    assert np.all(model.W[[0, 3]] == 5.0)


def test_restricted_gradient_vanishes_and_only_support_changes():
    rng = np.random.default_rng(3)
    D, K, S = 32, 8, 2
    stats = SufficientStats(D, S)
    model = WorldModel(D, S, LAM_INV)
    for phi, y in stream(rng, 20, D, K, S):
        accumulate(stats, phi, y)
        before = model.W.copy()
        solve_active(model, stats, phi.indices)
        off = np.setdiff1d(np.arange(D), phi.indices)
        assert np.array_equal(model.W[off], before[off])
        A = stats.to_dense()
        s = phi.indices
        sb = off
        grad = 2 * (A[np.ix_(s, s)] + LAM_INV * np.eye(K)) @ model.W[s] + 2 * A[np.ix_(s, sb)] @ model.W[sb] - 2 * stats.B[s]
        assert np.linalg.norm(grad) < 1e-8


def test_spd_margin_on_every_solve():
    rng = np.random.default_rng(4)
    D, K = 20, 5
    stats = SufficientStats(D, 1)
    for phi, y in stream(rng, 15, D, K, 1):
        accumulate(stats, phi, y)
        block = stats.block(phi.indices) + LAM_INV * np.eye(K)
        assert np.linalg.eigvalsh(block).min() >= LAM_INV - 1e-12


def test_cross_term_cases():
    rng = np.random.default_rng(5)
    D, S = 16, 2
    stats = SufficientStats(D, S)
    for phi, y in stream(rng, 10, D, 4, S):
        accumulate(stats, phi, y)
    s = np.array([2, 5, 11])
    W = rng.normal(size=(D, S))
    A = stats.to_dense()
    sb = np.setdiff1d(np.arange(D), s)
    assert np.max(np.abs(compute_cross_term(stats, s, W) - A[np.ix_(s, sb)] @ W[sb])) <= 1e-12
    W0 = W.copy()
    W0[sb] = 0.0
    assert np.all(compute_cross_term(stats, s, W0) == 0.0)
    assert np.all(compute_cross_term(stats, np.arange(D), W) == 0.0)


def test_one_sample_matches_sherman_morrison():
    phi = SparseFeature(10, np.array([2, 3, 7]), np.array([0.2, 0.5, 0.3]))
    y = np.array([0.4, -1.0])
    stats = SufficientStats(10, 2)
    accumulate(stats, phi, y)
    lam = 1 / LAM_INV
    d = phi.to_dense()
    closed = lam * np.outer(d, y) / (1 + lam * d @ d)
    assert np.max(np.abs(dense_ridge_oracle(stats, LAM_INV) - closed)) <= 1e-12


def test_dense_oracle_empty_and_cap():
    stats = SufficientStats(6, 2)
    assert np.all(dense_ridge_oracle(stats) == 0)
    with pytest.raises(InputError):
        dense_ridge_oracle(SufficientStats(100, 1), cap=64)


def test_predict_zero_model_and_linearity():
    enc = new_encoder(EncoderConfig(input_dim=4, num_tiles=8, seed=1))
    rng = np.random.default_rng(6)
    s, a = rng.normal(size=2), rng.normal(size=2)
    model = WorldModel(enc.dim, 2, LAM_INV)
    assert np.array_equal(predict(model, enc, s, a), s)
    W1, W2 = rng.normal(size=(enc.dim, 2)), rng.normal(size=(enc.dim, 2))
    p1 = predict(WorldModel(enc.dim, 2, W=W1), enc, s, a)
    p2 = predict(WorldModel(enc.dim, 2, W=W2), enc, s, a)
    p12 = predict(WorldModel(enc.dim, 2, W=W1 + W2), enc, s, a)
    assert np.allclose(p12, p1 + p2 - s, atol=1e-12)
    with pytest.raises(InputError):
        predict(model, enc, np.array([np.nan, 0]), a)


def test_predict_batch_rows_independent_of_batch():
    enc = new_encoder(EncoderConfig(input_dim=4, num_tiles=16, seed=2))
    rng = np.random.default_rng(7)
    W = rng.normal(size=(enc.dim, 2))
    S, A = rng.normal(size=(50, 2)), rng.normal(size=(50, 2))
    full = predict_batch(W, enc, S, A)
    for r in (0, 17, 49):
        assert np.array_equal(full[r], predict_batch(W, enc, S[r : r + 1], A[r : r + 1])[0])
    assert np.array_equal(full[:7], predict_batch(W, enc, S[:7], A[:7]))


def test_learns_linear_system():
    enc = new_encoder(EncoderConfig(input_dim=2, num_tiles=40, grid_dim=2, bins=9, seed=3))
    rng = np.random.default_rng(8)
    stats = SufficientStats(enc.dim, 1)
    model = WorldModel(enc.dim, 1, LAM_INV)
    for _ in range(3000):
        s, a = rng.uniform(-1, 1, 1), rng.uniform(-1, 1, 1)
        phi = enc.encode(np.concatenate([s, a]))
        accumulate(stats, phi, 0.1 * a)
        solve_active(model, stats, phi.indices)
    errs = []
    for _ in range(200):
        s, a = rng.uniform(-1, 1, 1), rng.uniform(-1, 1, 1)
        errs.append(abs(predict(model, enc, s, a)[0] - (s[0] + 0.1 * a[0])))
    assert max(errs) < 1e-2


def test_utilization_counts_active_rows():
    model = WorldModel(20, 1)
    assert utilization(model) == 0.0
    stats = SufficientStats(20, 1)
    phi = SparseFeature(20, np.array([1, 5, 9, 12]), np.full(4, 0.25))
    accumulate(stats, phi, np.array([1.0]))
    solve_active(model, stats, phi.indices)
    assert utilization(model) == 4 / 20
    # rows never in a support stay exactly zero
    assert np.all(model.W[~model.active] == 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 40))
def test_utilization_non_decreasing(seed, T):
    rng = np.random.default_rng(seed)
    D = 30
    stats, model = SufficientStats(D, 1), WorldModel(D, 1)
    last = 0.0
    for phi, y in stream(rng, T, D, 4, 1):
        accumulate(stats, phi, y)
        solve_active(model, stats, phi.indices)
        u = utilization(model)
        assert u >= last
        last = u


def test_solve_rejects_bad_support():
    model, stats = WorldModel(5, 1), SufficientStats(5, 1)
    with pytest.raises(InputError):
        solve_active(model, stats, np.array([], dtype=int))
    with pytest.raises(InputError):
        solve_active(model, stats, np.array([7]))


def test_lambda_inv_must_be_positive():
    with pytest.raises(InputError):
        WorldModel(3, 1, lambda_inv=0.0)


def test_stats_copy_is_independent():
    rng = np.random.default_rng(9)
    stats = SufficientStats(12, 1)
    for phi, y in stream(rng, 5, 12, 3, 1):
        accumulate(stats, phi, y)
    clone = stats.copy()
    accumulate(stats, random_feature(rng, 12, 3), np.ones(1))
    assert clone.count == 5
    assert not np.array_equal(clone.to_dense(), stats.to_dense())
