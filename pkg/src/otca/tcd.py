"""Trajectory-level credit decomposition.

Trajectories are stored in sampling order: index 0 is pure noise, the last
state is the final sample. The delta for transition ``j`` is
``S[j+1] - S[j]``, the gain in cosine alignment with the final state made by
that step. In the reversed (noisier = larger index) convention this is
``S_t - S_{t+1}``; both describe the same quantity.

All functions act on the last axis, so a stack of trajectories works too.
"""
import numpy as np

from otca.exceptions import DegenerateError

DEFAULT_EPS = 1e-4


def similarity_profile(states):
    """Cosine similarity of every state with the final one.

    ``states`` is (T+1, d) or (N, T+1, d). A zero-norm intermediate state has
    no direction and gets similarity 0.
    """
    Z = np.asarray(states, dtype=np.float64)
    if Z.ndim < 2 or Z.shape[-2] < 2:
        raise ValueError("a trajectory needs at least two states")
    Z = Z.reshape(Z.shape[:-1] + (-1,))
    final = Z[..., -1:, :]
    nf = np.linalg.norm(final, axis=-1)
    if np.any(nf == 0.0):
        raise DegenerateError("degenerate trajectory")
    nz = np.linalg.norm(Z, axis=-1)
    dots = np.sum(Z * final, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        S = dots / (nz * nf)
    S = np.where(nz == 0.0, 0.0, np.clip(S, -1.0, 1.0))
    S[..., -1] = 1.0
    return S


def step_deltas(S):
    S = np.asarray(S, dtype=np.float64)
    if S.shape[-1] < 2:
        raise ValueError("need at least two similarity values")
    return S[..., 1:] - S[..., :-1]


def temporal_weights(delta_s, eps=DEFAULT_EPS):
    if eps <= 0:
        raise ValueError("eps must be positive")
    raw = np.maximum(0.0, np.asarray(delta_s, dtype=np.float64)) + eps
    return raw / raw.sum(axis=-1, keepdims=True)


def apply_weight_floor(w, w_min):
    """Floor each weight at ``w_min / T`` then renormalize; ``w_min = 0`` is a no-op.

    ``w_min`` is expressed on the uniform scale where every weight is 1, so the
    floors add up to ``w_min`` and it must lie in ``[0, 1]``.
    """
    w = np.asarray(w, dtype=np.float64)
    if not 0.0 <= w_min <= 1.0:
        raise ValueError(f"infeasible weight floor w_min={w_min}; need 0 <= w_min <= 1")
    if w_min == 0.0:
        return w
    floored = np.maximum(w, w_min / w.shape[-1])
    return floored / floored.sum(axis=-1, keepdims=True)


def weight_entropy(w):
    w = np.asarray(w, dtype=np.float64)
    return -np.sum(w * np.log(w), axis=-1)


def trajectory_weights(states, eps=DEFAULT_EPS, w_min=0.0):
    """States -> (step deltas, temporal weights)."""
    dS = step_deltas(similarity_profile(states))
    return dS, apply_weight_floor(temporal_weights(dS, eps), w_min)
