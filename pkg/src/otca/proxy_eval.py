"""How well step alignment gains track per-step reward gains.

Ties are broken toward the lowest index everywhere (top-k and argmax).
"""
from dataclasses import asdict, dataclass

import numpy as np

from otca import kernels, tcd
from otca.exceptions import DegenerateError
from otca.numerics import pearson, spearman
from otca.rewards import reward_delta_profile


def pairwise_order_agreement(x, y):
    """Fraction of index pairs ordered the same way in ``x`` and ``y``.

    A pair tied in one sequence agrees only if it is tied in the other too.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length sequences with T >= 2")
    return float(kernels.pairwise_agreement(x, y))


def top_k(x, k):
    return np.argsort(-np.asarray(x, dtype=np.float64), kind="stable")[:k]


def recall_at_k(x, y, k):
    if not 1 <= k <= len(x):
        raise ValueError(f"k={k} outside [1, {len(x)}]")
    return len(set(top_k(x, k).tolist()) & set(top_k(y, k).tolist())) / k


def argmax_distance(x, y):
    return abs(int(np.argmax(x)) - int(np.argmax(y)))


@dataclass
class ProxyReport:
    pearson_mean: float
    pearson_std: float
    spearman_mean: float
    spearman_std: float
    pairwise_agreement_mean: float
    pairwise_agreement_std: float
    recall_at_3: float
    recall_at_5: float
    argmax_distance_mean: float
    n_trajectories: int
    n_skipped_correlation: int

    def to_dict(self):
        return asdict(self)


def _mean_std(vals):
    if not vals:
        return float("nan"), float("nan")
    a = np.asarray(vals, dtype=np.float64)
    return float(a.mean()), float(a.std())


def report_from_profiles(delta_s, delta_r):
    """Per-trajectory metrics between paired profiles, averaged.

    ``delta_s`` and ``delta_r`` are sequences of 1-D profiles (or (N, T) arrays).
    Constant profiles are left out of the correlations and counted.
    """
    if len(delta_s) != len(delta_r):
        raise ValueError("profile lists differ in length")
    if len(delta_s) < 2:
        raise ValueError("need at least two trajectories")
    pears, spears, agree, r3, r5, dist = [], [], [], [], [], []
    skipped = 0
    for x, y in zip(delta_s, delta_r):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        try:
            p, s = pearson(x, y), spearman(x, y)
        except DegenerateError:
            skipped += 1
        else:
            pears.append(p)
            spears.append(s)
        agree.append(pairwise_order_agreement(x, y))
        if len(x) >= 3:
            r3.append(recall_at_k(x, y, 3))
        if len(x) >= 5:
            r5.append(recall_at_k(x, y, 5))
        dist.append(argmax_distance(x, y))
    pm, ps = _mean_std(pears)
    sm, ss = _mean_std(spears)
    am, as_ = _mean_std(agree)
    return ProxyReport(
        pearson_mean=pm, pearson_std=ps,
        spearman_mean=sm, spearman_std=ss,
        pairwise_agreement_mean=am, pairwise_agreement_std=as_,
        recall_at_3=_mean_std(r3)[0], recall_at_5=_mean_std(r5)[0],
        argmax_distance_mean=float(np.mean(dist)),
        n_trajectories=len(delta_s), n_skipped_correlation=skipped,
    )


def proxy_report(traj, net, schedule, specs, aggregate="mean"):
    """Compare step alignment gains with reward gains over sampled trajectories.

    ``aggregate`` is ``"mean"`` (average reward gain over objectives) or the
    integer index of a single objective.
    """
    dS = tcd.step_deltas(tcd.similarity_profile(traj.states))
    dR = reward_delta_profile(traj, net, schedule, specs)
    if aggregate == "mean":
        dR = dR.mean(axis=-1)
    elif isinstance(aggregate, (int, np.integer)):
        dR = dR[..., int(aggregate)]
    else:
        raise ValueError(f"unknown aggregate rule {aggregate!r}")
    return report_from_profiles(dS, dR)
