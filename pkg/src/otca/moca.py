"""Multi-objective credit allocation.

Per sample, the K group-normalized advantages are fused into one scalar
``z = c @ A`` with ``c`` on the probability simplex, by minimizing
``z**2 - lam * z``. Because the image of the simplex under ``c -> c @ A`` is
the interval ``[min A, max A]``, the problem is one dimensional: clip the
unconstrained minimizer ``lam / 2`` into that interval and recover a sparse
``c`` by interpolating between the two advantages that bracket it.

``lam`` is an exploration bias: zero unless the advantage sum is positive,
and grows with how far the trajectory's weighted alignment score sits from the
rest of its group.
"""
import numpy as np

from otca import kernels

SOLVER_TOL = 1e-8
EXPLORE_EPS = 1e-6


def exploration_signal(weights, delta_s, group_q, eps=EXPLORE_EPS):
    """Return ``(q, e)`` for one trajectory.

    ``q`` is the weighted sum of step deltas and ``e = |q| / (std(group_q) + eps)``
    with the population std over the group's scores (this sample included).
    """
    group_q = np.asarray(group_q, dtype=np.float64)
    if group_q.size < 2:
        raise ValueError("exploration signal needs a group of at least 2")
    q = float(np.dot(weights, delta_s))
    return q, abs(q) / (group_q.std() + eps)


def exploration_signals(W, dS, eps=EXPLORE_EPS):
    """Vectorized :func:`exploration_signal` over a whole group (rows)."""
    W = np.asarray(W, dtype=np.float64)
    dS = np.asarray(dS, dtype=np.float64)
    if W.shape[0] < 2:
        raise ValueError("exploration signal needs a group of at least 2")
    q = np.sum(W * dS, axis=-1)
    return q, np.abs(q) / (q.std() + eps)


def exploration_lambda(advantages, e, eps=EXPLORE_EPS):
    s = float(np.sum(advantages))
    return max(0.0, s) / (abs(s) + eps) * float(np.tanh(e))


def exploration_lambdas(A, e, eps=EXPLORE_EPS):
    s = np.asarray(A, dtype=np.float64).sum(axis=-1)
    return np.maximum(0.0, s) / (np.abs(s) + eps) * np.tanh(e)


def _check(A, lam):
    A = np.asarray(A, dtype=np.float64)
    if A.shape[-1] == 0:
        raise ValueError("need at least one objective")
    if not np.all(np.isfinite(A)):
        raise ValueError("advantages must be finite")
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("exploration strength must be finite and >= 0")
    return A, lam


def moca_solve(advantages, lam=0.0, eps=SOLVER_TOL):
    """Coefficient vector on the simplex for one sample's advantages."""
    A, lam = _check(advantages, lam)
    if A.ndim != 1:
        raise ValueError("advantages must be a 1-D vector; use moca_solve_batch")
    return kernels.moca_solve_rows(A[None, :], np.atleast_1d(lam), eps)[0]


def moca_solve_batch(A, lam, eps=SOLVER_TOL):
    """Row-wise :func:`moca_solve`; ``A`` is (n, K), ``lam`` is (n,)."""
    A, lam = _check(A, lam)
    lam = np.broadcast_to(lam, A.shape[:1]).copy()
    return kernels.moca_solve_rows(np.ascontiguousarray(A), lam, eps)


def objective(c, advantages, lam):
    z = float(np.dot(c, advantages))
    return z * z - lam * z


def brute_force_oracle(advantages, lam, resolution=1e-4):
    """Exhaustive grid minimum of ``z**2 - lam*z`` over ``[min A, max A]``.

    Grid spacing is at most ``resolution`` and both interval ends are on the
    grid. Returns ``(z, objective)``.
    """
    A = np.asarray(advantages, dtype=np.float64)
    if A.size > 4:
        raise ValueError("grid oracle is limited to K <= 4")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    lo, hi = float(A.min()), float(A.max())
    n = int(np.ceil((hi - lo) / resolution)) + 1
    z, f = kernels.grid_quadratic_min(lo, hi, float(lam), n)
    return float(z), float(f)
