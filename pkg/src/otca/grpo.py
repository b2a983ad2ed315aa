"""Group-relative advantages, OTCA effective advantages and the clipped surrogate."""
import warnings
from dataclasses import dataclass

import numpy as np

from otca import moca, tcd
from otca.exceptions import DegenerateGroupWarning, NumericalError
from otca.flow_env import log_density, log_density_grad

_ZERO_STD = 1e-12


def degenerate_columns(rewards):
    R = np.asarray(rewards, dtype=np.float64)
    std = R.std(axis=0)
    return std <= _ZERO_STD * np.maximum(1.0, np.abs(R.mean(axis=0)))


def normalize_advantages(rewards):
    """Column-wise ``(r - mean) / std`` with the population std.

    Constant columns give zero advantages and a :class:`DegenerateGroupWarning`.
    """
    R = np.asarray(rewards, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    if R.shape[0] < 2:
        raise ValueError("a group needs at least two samples")
    flat = degenerate_columns(R)
    std = np.where(flat, 1.0, R.std(axis=0))
    A = (R - R.mean(axis=0)) / std
    if flat.any():
        warnings.warn(f"zero-variance reward column(s) {np.flatnonzero(flat).tolist()}",
                      DegenerateGroupWarning, stacklevel=2)
        A[:, flat] = 0.0
    return A


def effective_advantages(adv, coeffs, weights):
    """``eff[i, t] = weights[i, t] * (coeffs[i] @ adv[i])``."""
    adv = np.asarray(adv, dtype=np.float64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if adv.shape != coeffs.shape or weights.ndim != 2 or weights.shape[0] != adv.shape[0]:
        raise ValueError(f"shape mismatch: adv {adv.shape}, coeffs {coeffs.shape}, weights {weights.shape}")
    return weights * np.sum(coeffs * adv, axis=1)[:, None]


def _ratios(new_logp, old_logp):
    new_logp = np.asarray(new_logp, dtype=np.float64)
    old_logp = np.asarray(old_logp, dtype=np.float64)
    if not (np.all(np.isfinite(new_logp)) and np.all(np.isfinite(old_logp))):
        raise NumericalError("non-finite log-density in surrogate")
    return np.exp(new_logp - old_logp)


def clipped_surrogate(eff, new_logp, old_logp, clip_eps=1e-4, clip_mode="halfwidth"):
    """Mean over samples and steps of the clipped importance-weighted advantage.

    ``clip_mode="halfwidth"`` is the usual ``clip(rho, 1-eps, 1+eps)``;
    ``"ratio_floor"`` instead floors the ratio at ``clip_eps``.
    """
    if clip_eps <= 0:
        raise ValueError("clip_eps must be positive")
    rho = _ratios(new_logp, old_logp)
    eff = np.asarray(eff, dtype=np.float64)
    if clip_mode == "ratio_floor":
        return float(np.mean(np.maximum(rho, clip_eps) * eff))
    return float(np.mean(np.minimum(rho * eff, np.clip(rho, 1 - clip_eps, 1 + clip_eps) * eff)))


def surrogate_cotangent(eff, new_logp, old_logp, clip_eps=1e-4, clip_mode="halfwidth"):
    """d(surrogate)/d(new_logp) per cell; clipped-and-binding cells get 0."""
    rho = _ratios(new_logp, old_logp)
    eff = np.asarray(eff, dtype=np.float64)
    if clip_mode == "ratio_floor":
        live = rho >= clip_eps
    else:
        live = ~(((eff > 0) & (rho > 1 + clip_eps)) | ((eff < 0) & (rho < 1 - clip_eps)))
    return np.where(live, rho * eff, 0.0) / eff.size


def surrogate_gradient(net, schedule, traj, eff, clip_eps=1e-4, clip_mode="halfwidth", old_logp=None):
    """``(surrogate value, flat parameter gradient)`` for rollouts ``traj``.

    ``old_logp`` defaults to the log-densities recorded at sampling time.
    """
    old = traj.log_probs if old_logp is None else old_logp
    new = log_density(net, schedule, traj)
    cot = surrogate_cotangent(eff, new, old, clip_eps, clip_mode)
    _, grad = log_density_grad(net, schedule, traj, cot)
    return clipped_surrogate(eff, new, old, clip_eps, clip_mode), grad


@dataclass
class CreditConfig:
    tcd_eps: float = 1e-4
    moca_eps: float = 1e-8
    explore_eps: float = 1e-6
    w_min: float = 0.0
    uniform_w: bool = False
    uniform_c: bool = False
    exploration: bool = True


def otca_step(states, rewards, config=None):
    """Effective advantages for one group.

    ``states`` is (G, T+1, d), ``rewards`` is (G, K). Returns
    ``(eff (G, T), diagnostics dict)``.
    """
    config = config or CreditConfig()
    states = np.asarray(states, dtype=np.float64)
    G, T = states.shape[0], states.shape[1] - 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateGroupWarning)
        A = normalize_advantages(rewards)
    K = A.shape[1]

    # step 1: temporal credit
    dS = tcd.step_deltas(tcd.similarity_profile(states))
    if config.uniform_w:
        W = np.full((G, T), 1.0 / T)
    else:
        W = tcd.apply_weight_floor(tcd.temporal_weights(dS, config.tcd_eps), config.w_min)

    # step 2: objective credit
    q, e = moca.exploration_signals(W, dS, config.explore_eps)
    if config.exploration and not config.uniform_c:
        lam = moca.exploration_lambdas(A, e, config.explore_eps)
    else:
        lam = np.zeros(G)
    if config.uniform_c:
        C = np.full((G, K), 1.0 / K)
    else:
        C = moca.moca_solve_batch(A, lam, config.moca_eps)

    # step 3
    eff = effective_advantages(A, C, W)
    diag = {
        "advantages": A,
        "delta_s": dS,
        "weights": W,
        "q": q,
        "e": e,
        "lam": lam,
        "coeffs": C,
        "weight_entropy": tcd.weight_entropy(W),
        "degenerate_columns": degenerate_columns(rewards),
    }
    return eff, diag
