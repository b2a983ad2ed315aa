import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otca.moca import (brute_force_oracle, exploration_lambda, exploration_lambdas,
                       exploration_signal, exploration_signals, moca_solve, moca_solve_batch,
                       objective)

adv = st.floats(-3, 3, allow_nan=False)


def simplex_grid_min(A, lam, res):
    """Objective minimum by enumerating coefficient vectors on a simplex lattice (K = 3)."""
    n = int(round(1 / res))
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    c = np.stack([i[keep], j[keep], n - i[keep] - j[keep]], axis=1) / n
    z = c @ np.asarray(A)
    f = z * z - lam * z
    k = np.argmin(f)
    return c[k], f[k]


# --- exploration signal ------------------------------------------------------

def test_exploration_signal_examples():
    q, e = exploration_signal([0.5, 0.5], [0.2, 0.2], [0.2, 0.2], eps=1e-6)
    assert q == pytest.approx(0.2)
    assert e == pytest.approx(0.2 / 1e-6)

    q, e = exploration_signal([0.5, 0.5], [0.0, 0.0], [0.0, 0.3])
    assert (q, e) == (0.0, 0.0)

    # std of {0.3, 0.1} with divisor N is 0.1
    q, e = exploration_signal([1.0, 0.0], [0.3, -0.1], [0.3, 0.1], eps=1e-6)
    assert q == pytest.approx(0.3)
    assert e == pytest.approx(0.3 / (0.1 + 1e-6), rel=1e-12)

    with pytest.raises(ValueError):
        exploration_signal([1.0], [0.1], [0.1])


def test_exploration_signals_batch_matches_scalar(rng):
    W = rng.dirichlet(np.ones(5), size=6)
    dS = rng.normal(size=(6, 5))
    q, e = exploration_signals(W, dS)
    for i in range(6):
        qi, ei = exploration_signal(W[i], dS[i], q)
        assert qi == pytest.approx(q[i], abs=1e-15)
        assert ei == pytest.approx(e[i], rel=1e-12)


def test_exploration_lambda_examples():
    assert exploration_lambda([-1, -2], 5.0) == 0.0
    assert exploration_lambda([1, 1], 0.0) == 0.0
    assert exploration_lambda([2, 1], 1.0, eps=1e-6) == pytest.approx(3 / (3 + 1e-6) * np.tanh(1.0), abs=1e-15)
    assert exploration_lambda([2, 1], 1.0, eps=1e-6) == pytest.approx(0.761594, abs=1e-6)


@given(st.lists(adv, min_size=1, max_size=5), st.floats(0, 50))
def test_lambda_range(A, e):
    lam = exploration_lambda(A, e)
    assert 0.0 <= lam < 1.0
    if sum(A) <= 0:
        assert lam == 0.0
    np.testing.assert_allclose(exploration_lambdas(np.array([A]), np.array([e])), [lam])


# --- solver ------------------------------------------------------------------

def test_case1_all_equal():
    for lam in (0.0, 0.4, 0.99):
        np.testing.assert_array_equal(moca_solve([1, 1, 1], lam), [1, 0, 0])


def test_case2_target_on_advantage():
    # z_hat = 0.3 coincides with A_2; the lowest matching index wins
    np.testing.assert_array_equal(moca_solve([-1.0, 0.3, 0.3, 2.0], 0.6), [0, 1, 0, 0])
    # clipping to the boundary also lands on an advantage
    np.testing.assert_array_equal(moca_solve([4.0, 5.0], 0.0), [1, 0])
    np.testing.assert_array_equal(moca_solve([-5.0, -4.0], 0.5), [0, 1])


def test_case3_interpolation():
    np.testing.assert_allclose(moca_solve([-1, 1], 0.0), [0.5, 0.5], atol=1e-15)
    c = moca_solve([-2, 0, 3], 1.0)
    np.testing.assert_allclose(c, [0, 5 / 6, 1 / 6], atol=1e-15)
    assert c @ np.array([-2, 0, 3]) == pytest.approx(0.5, abs=1e-12)
    _, f_grid = simplex_grid_min([-2, 0, 3], 1.0, 1e-3)
    assert objective(c, [-2, 0, 3], 1.0) <= f_grid + 1e-12
    assert objective(c, [-2, 0, 3], 1.0) == pytest.approx(-0.25, abs=1e-12)


def test_shared_boundary_uses_lower_bracket():
    # z_hat = 0 sits exactly on A=0 -> case 2 fires first
    np.testing.assert_array_equal(moca_solve([-1.0, 0.0, 1.0], 0.0), [0, 1, 0])
    # with a duplicated bracket end the first ascending bracket is taken
    c = moca_solve([-1.0, 1.0, 1.0], 0.0)
    np.testing.assert_allclose(c, [0.5, 0.5, 0.0])


def test_single_objective_and_errors():
    np.testing.assert_array_equal(moca_solve([0.7], 0.3), [1.0])
    with pytest.raises(ValueError):
        moca_solve([], 0.0)
    with pytest.raises(ValueError):
        moca_solve([1.0, np.nan], 0.0)
    with pytest.raises(ValueError):
        moca_solve([1.0, 2.0], -0.1)


def test_oracle_examples():
    assert brute_force_oracle([-1, 1], 0.0) == pytest.approx((0.0, 0.0), abs=1e-12)
    z, f = brute_force_oracle([-2, 0, 3], 1.0, 1e-4)
    assert z == pytest.approx(0.5, abs=1e-4)
    assert f == pytest.approx(-0.25, abs=1e-8)
    assert brute_force_oracle([4, 5], 0.0) == pytest.approx((4.0, 16.0))
    with pytest.raises(ValueError):
        brute_force_oracle([1, 2, 3, 4, 5], 0.0)


def test_batch_matches_single(rng):
    A = rng.uniform(-3, 3, size=(200, 3))
    lam = rng.uniform(0, 1, size=200)
    C = moca_solve_batch(A, lam)
    for i in range(200):
        np.testing.assert_array_equal(C[i], moca_solve(A[i], lam[i]))


@settings(max_examples=300)
@given(st.lists(adv, min_size=2, max_size=4), st.floats(0, 1))
def test_simplex_and_optimality(A, lam):
    c = moca_solve(A, lam)
    assert np.all(c >= 0)
    assert abs(c.sum() - 1) <= 1e-9
    assert np.count_nonzero(c) <= 2
    _, f = brute_force_oracle(A, lam, 1e-3)
    assert objective(c, A, lam) <= f + 1e-6


@settings(max_examples=300)
@given(st.lists(adv, min_size=1, max_size=6))
def test_lambda_zero_is_min_norm(A):
    c = moca_solve(A, 0.0)
    z = c @ np.asarray(A)
    assert abs(z - np.clip(0.0, min(A), max(A))) <= 1e-8  # case 2 may stop within tol


def test_case3_exact_aggregation(rng):
    hits = 0
    for _ in range(2000):
        A = rng.uniform(-3, 3, size=rng.integers(2, 5))
        lam = rng.uniform(0, 1)
        zh = np.clip(lam / 2, A.min(), A.max())
        if np.min(np.abs(A - zh)) < 1e-8:
            continue
        hits += 1
        assert abs(moca_solve(A, lam) @ A - zh) <= 1e-12
    assert hits > 1000


def test_permutation_equivariance(rng):
    for _ in range(500):
        K = rng.integers(2, 6)
        A = rng.uniform(-3, 3, size=K)
        lam = rng.uniform(0, 1)
        perm = rng.permutation(K)
        np.testing.assert_allclose(moca_solve(A[perm], lam), moca_solve(A, lam)[perm], atol=1e-15)


def test_lambda_monotone(rng):
    for _ in range(200):
        A = rng.uniform(-3, 3, size=rng.integers(2, 5))
        if A.max() <= 0:
            continue
        zs = [moca_solve(A, lam) @ A for lam in np.linspace(0, 1, 21)]
        assert np.all(np.diff(zs) >= -1e-12)


def test_grid_oracle_agrees_with_simplex_enumeration():
    """The 1-D reduction and a direct simplex lattice give the same minimum."""
    for A, lam in itertools.product([(-2, 0, 3), (0.5, 1.5, 2.5), (-3, -1, -0.2)], (0.0, 0.5, 1.0)):
        _, f1 = brute_force_oracle(A, lam, 1e-3)
        _, f2 = simplex_grid_min(A, lam, 2e-3)
        assert f1 == pytest.approx(f2, abs=1e-4)
