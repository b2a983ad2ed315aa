"""Synthetic reward objectives over 2-D (or d-D) samples."""
from dataclasses import dataclass

import numpy as np

from otca.flow_env import predict_final

KINDS = ("mode_proximity", "direction_alignment", "norm_penalty")


@dataclass(frozen=True)
class RewardSpec:
    kind: str
    name: str
    target: tuple = None
    scale: float = 1.0
    axis: tuple = None
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if self.kind == "mode_proximity":
            if self.target is None or not self.scale > 0:
                raise ValueError(f"{self.name}: mode_proximity needs a target and scale > 0")
        if self.kind == "direction_alignment":
            if self.axis is None or not np.any(np.asarray(self.axis, dtype=float)):
                raise ValueError(f"{self.name}: direction_alignment needs a nonzero axis")
        for v in (self.target, self.axis):
            if v is not None and not np.all(np.isfinite(v)):
                raise ValueError(f"{self.name}: parameters must be finite")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("target", "axis"):
            if d.get(key) is not None:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


def default_suite():
    """Two conflicting mode targets plus a ring preference."""
    return [
        RewardSpec("mode_proximity", "near_east", target=(3.0, 0.0), scale=3.0),
        RewardSpec("mode_proximity", "near_north", target=(0.0, 3.0), scale=3.0),
        RewardSpec("norm_penalty", "ring", radius=3.0),
    ]


def evaluate(spec, x):
    """Reward of one point (d,) or a batch (N, d)."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "mode_proximity":
        return -np.linalg.norm(x - np.asarray(spec.target), axis=-1) / spec.scale
    if spec.kind == "norm_penalty":
        return -np.abs(np.linalg.norm(x, axis=-1) - spec.radius)
    axis = np.asarray(spec.axis, dtype=np.float64)
    nx = np.linalg.norm(x, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (x @ axis) / (nx * np.linalg.norm(axis))
    # zero vector has no direction: reward 0
    return np.where(nx == 0.0, 0.0, cos)


def evaluate_all(specs, x):
    """(K,) for one point or (N, K) for a batch, in the order given."""
    x = np.asarray(x, dtype=np.float64)
    if not specs:
        return np.zeros(x.shape[:-1] + (0,))
    return np.stack([evaluate(s, x) for s in specs], axis=-1)


def reward_delta_profile(traj, net, schedule, specs):
    """(N, T, K) reward change per transition.

    Intermediate states are scored through the one-step clean prediction;
    the terminal state is scored as is.
    """
    n, T = traj.n, traj.steps
    ts = traj.timesteps
    X = np.empty_like(traj.states)
    for j in range(T):
        X[:, j] = predict_final(net, traj.states[:, j], np.full(n, ts[j]), traj.cond)
    X[:, T] = traj.states[:, T]
    R = evaluate_all(specs, X)
    return R[:, 1:] - R[:, :-1]
