import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import central_diff, grpo_surrogate_loops, rel_err
from otca.exceptions import DegenerateGroupWarning, NumericalError
from otca.flow_env import sde_sample
from otca.grpo import (CreditConfig, clipped_surrogate, effective_advantages, normalize_advantages,
                       otca_step, surrogate_cotangent, surrogate_gradient)


def test_normalize_examples():
    a = normalize_advantages(np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(a[:, 0], [-1.224744871391589, 0, 1.224744871391589], atol=1e-12)
    np.testing.assert_allclose(normalize_advantages([[0.0], [2.0]])[:, 0], [-1, 1])
    with pytest.warns(DegenerateGroupWarning):
        out = normalize_advantages([[5.0, 1.0], [5.0, 2.0]])
    np.testing.assert_array_equal(out[:, 0], 0)
    with pytest.raises(ValueError):
        normalize_advantages([[1.0, 2.0]])


@settings(max_examples=200)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 4)),
              elements=st.floats(-100, 100)), st.floats(1e-3, 1e3))
def test_normalize_properties(R, scale):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateGroupWarning)
        A = normalize_advantages(R)
        B = normalize_advantages(scale * R)
    live = R.std(axis=0) > 1e-6 * np.maximum(1, np.abs(R).max(axis=0))
    assert np.all(np.abs(A[:, live].mean(axis=0)) <= 1e-9)
    assert np.all(np.abs(A[:, live].std(axis=0) - 1) <= 1e-9)
    np.testing.assert_allclose(B[:, live], A[:, live], atol=1e-9)


def test_effective_examples():
    adv = np.array([[0.4, -1.2, 2.0]])
    np.testing.assert_allclose(effective_advantages(adv, [[0, 1, 0]], np.full((1, 4), 0.25)), [[-0.3] * 4])
    np.testing.assert_array_equal(effective_advantages(np.zeros((2, 3)), np.full((2, 3), 1 / 3),
                                                       np.full((2, 5), 0.2)), 0)
    row = effective_advantages([[-2, 0, 3]], [[0, 5 / 6, 1 / 6]], [[0.25, 0.75]])
    np.testing.assert_allclose(row, [[0.125, 0.375]], atol=1e-15)
    with pytest.raises(ValueError):
        effective_advantages(np.zeros((2, 3)), np.zeros((2, 2)), np.zeros((2, 4)))


def test_clip_examples():
    old = np.zeros((1, 1))
    assert clipped_surrogate([[1.0]], [[math.log(1.5)]], old, 0.2) == pytest.approx(1.2)
    assert clipped_surrogate([[-1.0]], [[math.log(0.5)]], old, 0.2) == pytest.approx(-0.8)
    eff = np.array([[0.3, -0.2], [1.0, 0.5]])
    assert clipped_surrogate(eff, np.ones((2, 2)), np.ones((2, 2))) == pytest.approx(eff.mean(), abs=1e-15)
    # ratio floor: only a lower bound on rho
    assert clipped_surrogate([[1.0]], [[math.log(1.5)]], old, 0.2, "ratio_floor") == pytest.approx(1.5)
    assert clipped_surrogate([[1.0]], [[-10.0]], old, 0.2, "ratio_floor") == pytest.approx(0.2)
    with pytest.raises(NumericalError):
        clipped_surrogate([[1.0]], [[np.nan]], old)
    with pytest.raises(ValueError):
        clipped_surrogate([[1.0]], old, old, 0.0)


def test_surrogate_matches_loop_oracle(rng):
    for _ in range(50):
        G, T = 4, 5
        adv = rng.normal(size=G)
        new, old = rng.normal(0, 0.3, (G, T)), rng.normal(0, 0.3, (G, T))
        eff = np.repeat(adv[:, None], T, axis=1)
        assert clipped_surrogate(eff, new, old, 0.2) == pytest.approx(
            grpo_surrogate_loops(adv, new, old, 0.2), abs=1e-14)


def test_cotangent_zero_on_binding_clip():
    eff = np.array([[1.0, 1.0, -1.0, -1.0]])
    new = np.log([[1.5, 0.9, 0.5, 1.1]])
    cot = surrogate_cotangent(eff, new, np.zeros((1, 4)), 0.2)
    np.testing.assert_allclose(cot, [[0, 0.9 / 4, 0, -1.1 / 4]])


def _rollouts(net, schedule, n, seed):
    rng = np.random.default_rng(seed)
    return sde_sample(net, schedule, rng.standard_normal((n, 2)), np.arange(n) % 2, rng)


def test_zero_advantage_gives_zero_gradient(small_net, schedule):
    traj = _rollouts(small_net, schedule, 3, 0)
    val, g = surrogate_gradient(small_net, schedule, traj, np.zeros((3, schedule.steps)))
    assert val == 0.0
    np.testing.assert_array_equal(g, 0)


def test_single_cell_policy_gradient(small_net, schedule):
    from otca.flow_env import step_log_density
    traj = _rollouts(small_net, schedule, 3, 1)
    eff = np.zeros((3, schedule.steps))
    eff[1, 2] = 0.7
    _, g = surrogate_gradient(small_net, schedule, traj, eff)
    _, g_step = step_log_density(traj.step(1, 2), small_net, schedule)
    np.testing.assert_allclose(g, 0.7 * g_step / eff.size, rtol=1e-12, atol=1e-18)


@pytest.mark.parametrize("mode", ["halfwidth", "ratio_floor"])
def test_gradient_finite_differences(small_net, schedule, mode):
    rng = np.random.default_rng(11)
    traj = _rollouts(small_net, schedule, 3, 2)
    net = small_net.copy()
    net.params += rng.normal(0, 0.02, net.n_params)
    eff = rng.normal(size=(3, schedule.steps))
    clip = 0.2 if mode == "halfwidth" else 0.5
    _, g = surrogate_gradient(net, schedule, traj, eff, clip, mode)

    def f(p):
        probe = net.copy()
        probe.params[:] = p
        return surrogate_gradient(probe, schedule, traj, eff, clip, mode)[0]

    assert rel_err(g, central_diff(f, net.params)) < 1e-4


def test_collinearity(small_net, schedule):
    traj = _rollouts(small_net, schedule, 2, 3)
    for i, t in [(0, 0), (1, 3), (0, 5)]:
        unit = np.zeros((2, schedule.steps))
        unit[i, t] = 1.0
        _, g1 = surrogate_gradient(small_net, schedule, traj, unit)
        for a in (-2.3, 0.4, 1.7):
            _, ga = surrogate_gradient(small_net, schedule, traj, a * unit)
            assert rel_err(ga, a * g1) <= 1e-9


def test_baseline_degeneration(rng):
    cfg = CreditConfig(uniform_w=True, uniform_c=True)
    for _ in range(20):
        G, T, K = 6, 5, 3
        states = rng.normal(size=(G, T + 1, 2))
        R = rng.normal(size=(G, K))
        eff, _ = otca_step(states, R, cfg)
        A = normalize_advantages(R).mean(axis=1)
        np.testing.assert_allclose(eff, np.repeat(A[:, None] / T, T, axis=1), atol=1e-15)
        new, old = rng.normal(0, 0.1, (G, T)), rng.normal(0, 0.1, (G, T))
        # uniform weights sum to one, so the surrogate is the per-step-averaged one scaled by 1/T
        assert T * clipped_surrogate(eff, new, old, 0.2) == pytest.approx(
            grpo_surrogate_loops(A, new, old, 0.2), abs=1e-12)


def test_otca_step_identical_trajectories():
    states = np.tile(np.array([[0.0, 1.0], [0.5, 0.5], [1.0, 0.2]]), (4, 1, 1))
    eff, diag = otca_step(states, [[1.0, 2.0], [2.0, 0.0], [3.0, 1.0], [0.0, 1.0]])
    # zero spread in q: the guard divides by eps alone
    np.testing.assert_allclose(diag["e"], np.abs(diag["q"]) / 1e-6, rtol=1e-12)
    assert np.all(np.isfinite(diag["lam"]))
    assert np.all((diag["lam"] >= 0) & (diag["lam"] < 1))
    assert np.all(np.isfinite(eff))


def test_otca_step_golden_trace():
    """G=2, K=2, T=2 instance traced by hand, one step at a time."""
    s2 = 1 / math.sqrt(2)
    states = np.array([[[0, 1], [1, 1], [1, 0]],
                       [[1, 0], [1, 1], [1, 0]]], dtype=float)
    rewards = np.array([[1.0, 3.0], [0.0, 3.0]])
    eps_w, eps_e = 1e-4, 1e-6

    # advantages: column 0 -> (1, -1); column 1 is constant -> 0
    A = [[1.0, 0.0], [-1.0, 0.0]]
    # similarities with the final state and their forward differences
    dS = [[s2 - 0, 1 - s2], [s2 - 1, 1 - s2]]
    W = []
    for d in dS:
        raw = [max(0.0, x) + eps_w for x in d]
        W.append([r / sum(raw) for r in raw])
    q = [W[i][0] * dS[i][0] + W[i][1] * dS[i][1] for i in range(2)]
    std = abs(q[0] - q[1]) / 2
    e = [abs(qi) / (std + eps_e) for qi in q]
    # sample 0: sum A = 1 > 0; sample 1: sum A = -1 -> lambda 0
    lam0 = 1.0 / (1.0 + eps_e) * math.tanh(e[0])
    lam = [lam0, 0.0]
    # sample 0: z_hat = lam0/2 lies strictly inside (0, 1) -> interpolate between A=0 and A=1
    z0 = lam0 / 2
    C = [[z0, 1 - z0], [0.0, 1.0]]  # sample 1: z_hat = 0 hits A_2 = 0 exactly
    eff_ref = [[W[i][t] * (C[i][0] * A[i][0] + C[i][1] * A[i][1]) for t in range(2)] for i in range(2)]

    eff, diag = otca_step(states, rewards, CreditConfig(tcd_eps=eps_w, explore_eps=eps_e))
    np.testing.assert_allclose(diag["advantages"], A, atol=1e-15)
    np.testing.assert_allclose(diag["delta_s"], dS, atol=1e-15)
    np.testing.assert_allclose(diag["weights"], W, atol=1e-15)
    np.testing.assert_allclose(diag["q"], q, atol=1e-15)
    np.testing.assert_allclose(diag["e"], e, rtol=1e-12)
    np.testing.assert_allclose(diag["lam"], lam, atol=1e-15)
    np.testing.assert_allclose(diag["coeffs"], C, atol=1e-15)
    np.testing.assert_allclose(eff, eff_ref, atol=1e-15)
    np.testing.assert_array_equal(diag["degenerate_columns"], [False, True])
    assert 0 < lam0 < 1


def test_otca_step_shapes_and_simplex(rng):
    eff, diag = otca_step(rng.normal(size=(12, 17, 2)), rng.normal(size=(12, 3)))
    assert eff.shape == (12, 16)
    np.testing.assert_allclose(diag["coeffs"].sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(diag["weights"].sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(eff.sum(axis=1), np.sum(diag["coeffs"] * diag["advantages"], axis=1), atol=1e-12)
