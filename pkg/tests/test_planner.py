from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftlcrl.errors import ConfigError
from ftlcrl.planner import (
    PlanParams,
    cem_plan,
    init_mean,
    rollout_return,
    rollout_returns,
    sample_colored_noise,
    shift_mean,
)


def params(A=1, **kw) -> PlanParams:
    return PlanParams(action_low=(-1.0,) * A, action_high=(1.0,) * A, **kw)


def periodogram_slope(x: np.ndarray, lo: float = 0.005, hi: float = 0.1) -> float:
    """Least-squares slope of log mean periodogram against log frequency."""
    H = x.shape[-1]
    f = np.fft.rfftfreq(H)
    pxx = np.mean(np.abs(np.fft.rfft(x, axis=-1)) ** 2, axis=0)
    band = (f >= lo) & (f <= hi)
    return float(np.polyfit(np.log(f[band]), np.log(pxx[band]), 1)[0])


def test_white_noise_lag_one_autocorrelation():
    x = sample_colored_noise(0.0, 4, 4096, np.random.default_rng(0))
    for row in x:
        r1 = np.corrcoef(row[:-1], row[1:])[0, 1]
        assert abs(r1) <= 0.05


@pytest.mark.parametrize("beta", [0.0, 1.0, 2.0])
def test_colored_noise_slope_and_variance(beta):
    x = sample_colored_noise(beta, 16, 4096, np.random.default_rng(1))
    assert abs(periodogram_slope(x) + beta) <= 0.3
    assert np.all(np.abs(x.var(axis=1) - 1.0) <= 0.1)
    assert np.all(np.abs(x.mean(axis=1)) <= 0.1)


def test_negative_beta_rejected():
    with pytest.raises(ConfigError):
        sample_colored_noise(-0.5, 1, 8, np.random.default_rng(0))


def test_horizon_one_is_white():
    x = sample_colored_noise(2.0, 3, 1, np.random.default_rng(2))
    assert x.shape == (3, 1) and np.all(np.isfinite(x))


def test_rollout_constant_reward_h1():
    dyn = lambda s, a: s + a  # noqa: E731
    rew = lambda s, a, s1: np.full(len(s), 3.5)  # noqa: E731
    assert rollout_return(dyn, rew, np.zeros(1), np.zeros((1, 1))) == 3.5


def test_rollout_frozen_state():
    g = np.array([1.0, -1.0])
    s0 = np.array([0.2, 0.4])
    dyn = lambda s, a: s.copy()  # noqa: E731
    rew = lambda s, a, s1: -np.linalg.norm(s1 - g, axis=1)  # noqa: E731
    H = 7
    got = rollout_return(dyn, rew, s0, np.ones((2, H)))
    assert got == pytest.approx(-H * np.linalg.norm(s0 - g), abs=1e-12)


def test_rollout_matches_hand_simulation():
    rng = np.random.default_rng(3)
    acts = rng.uniform(-1, 1, size=(1, 12))
    g = 0.7
    dyn = lambda s, a: s + 0.1 * a  # noqa: E731
    rew = lambda s, a, s1: -((s1[:, 0] - g) ** 2)  # noqa: E731
    x, total = 0.1, 0.0
    for a in acts[0]:
        x = x + 0.1 * a
        total += -((x - g) ** 2)
    assert rollout_return(dyn, rew, np.array([0.1]), acts) == pytest.approx(total, abs=1e-10)


def test_rollout_non_finite_is_minus_inf():
    def dyn(s, a):
        out = s + a
        out[0] = np.nan
        return out

    rew = lambda s, a, s1: np.zeros(len(s))  # noqa: E731
    r = rollout_returns(dyn, rew, np.zeros(1), np.zeros((3, 1, 4)))
    assert r[0] == -np.inf and np.all(r[1:] == 0.0)


def test_cem_action_independent_reward():
    p = params(A=2, population=40, horizon=5)
    mu0 = init_mean(p)
    res = cem_plan(np.zeros(2), lambda s, a: s, lambda s, a, s1: np.zeros(len(s)), mu0, p, np.random.default_rng(4))
    assert np.all(np.abs(res.action) <= 1.0)
    assert np.max(np.abs(res.mu - mu0)) < 0.6


def test_cem_pushes_towards_goal_1d():
    g, x0 = 1.0, 0.0
    dyn = lambda s, a: s + 0.1 * a  # noqa: E731
    rew = lambda s, a, s1: -((s1[:, 0] - g) ** 2)  # noqa: E731
    p = params(population=100, horizon=10)
    # oracle: exhaustive search over constant action sequences
    grid = np.linspace(-1, 1, 41)
    returns = [rollout_return(dyn, rew, np.array([x0]), np.full((1, 10), a)) for a in grid]
    assert grid[int(np.argmax(returns))] > 0
    for seed in range(5):
        res = cem_plan(np.array([x0]), dyn, rew, init_mean(p), p, np.random.default_rng(seed))
        assert res.action[0] > 0


def test_cem_quadratic_bowl():
    a_star = np.array([0.35, -0.6])
    p = params(A=2, population=150, horizon=1, iterations=3)
    rew = lambda s, a, s1: -np.sum((a - a_star) ** 2, axis=1)  # noqa: E731
    res = cem_plan(np.zeros(1), lambda s, a: s, rew, init_mean(p), p, np.random.default_rng(5))
    assert np.max(np.abs(res.action - a_star)) <= 0.1


def test_shift_mean_cases():
    init = np.array([0.0, 0.5])
    mu = np.arange(8.0).reshape(2, 4)
    out = shift_mean(mu, init)
    assert np.array_equal(out[:, :3], mu[:, 1:])
    assert np.array_equal(out[:, 3], init)
    one = shift_mean(np.ones((2, 1)), init)
    assert np.array_equal(one[:, 0], init)
    const = np.full((2, 4), 0.3)
    out = shift_mean(const, init)
    assert np.all(out[:, :3] == 0.3)
    m = mu
    for _ in range(4):
        m = shift_mean(m, init)
    assert np.array_equal(m, np.repeat(init[:, None], 4, axis=1))


def test_all_candidates_diverge_falls_back():
    p = params(population=20, horizon=3)
    mu0 = np.full((1, 3), 0.25)
    dyn = lambda s, a: np.full_like(s, np.inf)  # noqa: E731
    with pytest.warns(RuntimeWarning):
        res = cem_plan(np.zeros(1), dyn, lambda s, a, s1: np.zeros(len(s)), mu0, p, np.random.default_rng(0))
    assert res.degenerate
    assert res.action[0] == 0.25


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0), st.floats(0.05, 1.0))
def test_cem_invariants(seed, beta, mem):
    p = params(A=2, population=30, horizon=6, noise_beta=beta, memory_fraction=mem, sigma_min=0.05)
    g = np.array([0.8, -0.3])
    dyn = lambda s, a: np.clip(s + 0.2 * a, -2, 2)  # noqa: E731
    rew = lambda s, a, s1: -np.linalg.norm(s1 - g, axis=1)  # noqa: E731
    res = cem_plan(np.zeros(2), dyn, rew, init_mean(p), p, np.random.default_rng(seed))
    assert np.all(res.action >= -1) and np.all(res.action <= 1)
    assert np.all(res.mu >= -1) and np.all(res.mu <= 1)
    # re-evaluated memory keeps the best elite eligible
    assert all(b >= a - 1e-12 for a, b in zip(res.elite_best_per_iter, res.elite_best_per_iter[1:]))


def test_plan_identical_across_thread_counts():
    g = np.array([0.5, 0.5])
    dyn = lambda s, a: np.clip(s + 0.1 * a, -2, 2)  # noqa: E731
    rew = lambda s, a, s1: -np.linalg.norm(s1 - g, axis=1)  # noqa: E731
    base = params(A=2, population=64, horizon=8)
    ref = cem_plan(np.zeros(2), dyn, rew, init_mean(base), base, np.random.default_rng(9))
    for threads in (2, 3, 5):
        p = params(A=2, population=64, horizon=8, threads=threads)
        with ThreadPoolExecutor(threads) as pool:
            got = cem_plan(np.zeros(2), dyn, rew, init_mean(p), p, np.random.default_rng(9), pool)
        assert np.array_equal(got.action, ref.action)
        assert np.array_equal(got.mu, ref.mu)


@pytest.mark.parametrize(
    "kw",
    [
        dict(population=10, elite_fraction=0.1),
        dict(horizon=0),
        dict(iterations=0),
        dict(memory_fraction=1.5),
        dict(sigma_min=0.0),
        dict(noise_beta=-1.0),
    ],
)
def test_invalid_params(kw):
    with pytest.raises(ConfigError):
        params(**kw).validate()


def test_default_elite_count():
    p = params()
    assert p.num_elites == 15
    assert p.num_memory == round(0.3 * 15)
