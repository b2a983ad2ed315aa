"""Experiment runner: pretraining, the GRPO/OTCA loop, ablations and curve export.

Outputs of one run (under ``out_dir``):

* ``metrics.jsonl``  one JSON record per line, ``kind == "metrics"`` per iteration
  (proxy reports are appended with ``kind == "proxy_report"``)
* ``timing.jsonl``   wall-clock seconds per iteration (kept apart so the metrics
  log is byte-identical across repeated runs)
* ``final.ckpt``     policy checkpoint, ``summary.json`` final evaluation
"""
import csv
import json
import logging
import math
import os
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from otca import grpo
from otca.config import VARIANTS, dump_config
from otca.exceptions import ConfigError, NumericalError
from otca.flow_env import (Adam, MixtureSpec, NoiseSchedule, VelocityNet, flow_pretrain,
                           load_checkpoint, ode_sample, sample_mixture, save_checkpoint,
                           sde_sample)
from otca.numerics import child_seeds, make_rng
from otca.proxy_eval import proxy_report
from otca.rewards import evaluate_all

log = logging.getLogger(__name__)


def schedule_from(cfg):
    return NoiseSchedule(**vars(cfg.schedule))


def mixture_from(cfg):
    return MixtureSpec(centers=cfg.data.centers, std=cfg.data.std)


def credit_from(cfg):
    return grpo.CreditConfig(**vars(cfg.credit))


def pretrain(cfg, seed=None):
    """Fresh velocity net fitted to the configured mixture; returns ``(net, val_loss)``."""
    seed = cfg.seed if seed is None else seed
    data_seed, init_seed, train_seed = child_seeds([seed, 0], 3)
    mix = mixture_from(cfg)
    x, labels = sample_mixture(mix, make_rng(data_seed), cfg.pretrain.dataset_size)
    net = VelocityNet(cfg.dim, mix.n_cond, cfg.network.widths, seed=init_seed)
    return flow_pretrain(net, x, labels, steps=cfg.pretrain.steps,
                         batch_size=cfg.pretrain.batch_size,
                         lr=cfg.pretrain.learning_rate, seed=train_seed)


def load_or_pretrain(cfg, out_dir=None):
    """Use ``pretrain.checkpoint`` (or ``out_dir/pretrained.ckpt``) when present."""
    candidates = [cfg.pretrain.checkpoint]
    if out_dir is not None:
        candidates.append(os.path.join(out_dir, "pretrained.ckpt"))
    for path in candidates:
        if path and os.path.exists(path):
            net, _ = load_checkpoint(path)
            return net
    net, _ = pretrain(cfg)
    return net


def sample_rollouts(net, schedule, cfg, rng):
    """One iteration's groups: conditions drawn per group, G samples each."""
    G, n_groups, d = cfg.grpo.group_size, cfg.grpo.groups_per_iteration, cfg.dim
    n_cond = len(cfg.data.centers)
    conds = rng.integers(n_cond, size=n_groups)
    if cfg.grpo.shared_initial_noise:
        z0 = np.repeat(rng.standard_normal((n_groups, d)), G, axis=0)
    else:
        z0 = rng.standard_normal((n_groups * G, d))
    return sde_sample(net, schedule, z0, np.repeat(conds, G), rng)


def evaluate_policy(net, schedule, cfg, specs, seed):
    """Mean per-objective reward of ``evaluation.n_samples`` SDE samples."""
    rng = make_rng([cfg.evaluation.seed, seed])
    n = cfg.evaluation.n_samples
    conds = np.arange(n) % len(cfg.data.centers)
    traj = sde_sample(net, schedule, rng.standard_normal((n, cfg.dim)), conds, rng)
    R = evaluate_all(specs, traj.final)
    per = {s.name: float(R[:, k].mean()) for k, s in enumerate(specs)}
    return {"reward_mean": per, "aggregate_reward": float(R.mean())}


def _dumps(record):
    return json.dumps(record, sort_keys=True, allow_nan=True)


def run_experiment(cfg, out_dir, net=None):
    """Train one variant; returns the summary dict (also written to disk).

    Iteration 0 logs the untouched policy's rollouts; iterations 1..N each
    sample fresh groups, compute OTCA advantages, and take one ascent step on
    the surrogate accumulated over all groups.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    schedule = schedule_from(cfg)
    specs = cfg.reward_specs()
    credit = credit_from(cfg)
    G = cfg.grpo.group_size
    if net is None:
        net = load_or_pretrain(cfg, out)
    net = net.copy()
    rng = make_rng(child_seeds([cfg.seed, 1], 1)[0])
    opt = Adam(net.n_params, cfg.grpo.learning_rate)
    last_good = net.params.copy()

    metrics_path, timing_path = out / "metrics.jsonl", out / "timing.jsonl"
    with open(metrics_path, "w") as mlog, open(timing_path, "w") as tlog:
        for it in range(cfg.grpo.iterations + 1):
            t0 = time.perf_counter()
            traj = sample_rollouts(net, schedule, cfg, rng)
            rewards = evaluate_all(specs, traj.final)
            effs, lams, coeffs, ents = [], [], [], []
            for g in range(cfg.grpo.groups_per_iteration):
                sl = slice(g * G, (g + 1) * G)
                eff, diag = grpo.otca_step(traj.states[sl], rewards[sl], credit)
                effs.append(eff)
                lams.append(diag["lam"])
                coeffs.append(diag["coeffs"])
                ents.append(diag["weight_entropy"])
            eff = np.concatenate(effs)
            surrogate = None
            if it > 0:
                # old policy == current parameters: one inner epoch per snapshot
                surrogate, grad = grpo.surrogate_gradient(
                    net, schedule, traj, eff, cfg.grpo.clip_eps, cfg.grpo.clip_mode)
                if not (math.isfinite(surrogate) and np.all(np.isfinite(grad))):
                    net.params[:] = last_good
                    save_checkpoint(out / "last_good.ckpt", net, schedule)
                    raise NumericalError(f"non-finite surrogate or gradient at iteration {it}")
                last_good = net.params.copy()
                opt.step(net.params, -grad)
                if not np.all(np.isfinite(net.params)):
                    net.params[:] = last_good
                    save_checkpoint(out / "last_good.ckpt", net, schedule)
                    raise NumericalError(f"non-finite parameters after iteration {it}")
            record = {
                "kind": "metrics",
                "iteration": it,
                "variant": cfg.variant,
                "seed": cfg.seed,
                "reward_mean": {s.name: float(rewards[:, k].mean()) for k, s in enumerate(specs)},
                "aggregate_reward": float(rewards.mean()),
                "surrogate": surrogate,
                "mean_lambda": float(np.mean(np.concatenate(lams))),
                "mean_coeffs": np.concatenate(coeffs).mean(axis=0).tolist(),
                "weight_entropy": float(np.mean(np.concatenate(ents))),
            }
            mlog.write(_dumps(record) + "\n")
            tlog.write(_dumps({"iteration": it, "wall_time": time.perf_counter() - t0}) + "\n")

    save_checkpoint(out / "final.ckpt", net, schedule)
    summary = {"variant": cfg.variant, "seed": cfg.seed, "iterations": cfg.grpo.iterations,
               "final_eval": evaluate_policy(net, schedule, cfg, specs, cfg.seed),
               "last_record": record}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def _base_key(cfg):
    d = cfg.to_dict()
    d.pop("seed")
    d.pop("variant")
    for k in VARIANTS["full"]:
        d["credit"].pop(k)
    return _dumps(d)


def compare_variants(configs, out_dir, nets=None):
    """Run every config and tabulate final rewards per variant (mean and std over seeds).

    ``configs`` may differ only in variant flags and seed. ``nets`` optionally
    maps seed -> pretrained net so variants of a seed share their start point.
    """
    if not configs:
        raise ConfigError("no configurations to compare")
    base = _base_key(configs[0])
    for c in configs[1:]:
        if _base_key(c) != base:
            raise ConfigError("configs differ in more than variant flags and seed")
    nets = {} if nets is None else nets
    results = defaultdict(list)
    for cfg in configs:
        if cfg.seed not in nets:
            nets[cfg.seed] = load_or_pretrain(cfg)
        log.info("running variant=%s seed=%d", cfg.variant, cfg.seed)
        run_dir = Path(out_dir) / f"{cfg.variant}_seed{cfg.seed}"
        results[cfg.variant].append(run_experiment(cfg, run_dir, net=nets[cfg.seed]))
    names = [s.name for s in configs[0].reward_specs()]
    rows = []
    for variant, runs in results.items():
        row = {"variant": variant, "n_seeds": len(runs)}
        for name in names + ["aggregate"]:
            vals = np.array([r["final_eval"]["aggregate_reward"] if name == "aggregate"
                             else r["final_eval"]["reward_mean"][name] for r in runs])
            row[f"{name}_mean"] = float(vals.mean())
            row[f"{name}_std"] = float(vals.std())
        rows.append(row)
    write_table(rows, names, out_dir)
    return rows


def write_table(rows, names, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["variant", "n_seeds"] + [f"{n}_{s}" for n in names + ["aggregate"] for s in ("mean", "std")]
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    lines = ["| variant | " + " | ".join(names + ["aggregate"]) + " |",
             "|---" * (len(names) + 2) + "|"]
    for r in rows:
        cells = [f"{r[f'{n}_mean']:.4f} ± {r[f'{n}_std']:.4f}" for n in names + ["aggregate"]]
        lines.append(f"| {r['variant']} | " + " | ".join(cells) + " |")
    (out / "ablation.md").write_text("\n".join(lines) + "\n")


def read_metrics(paths):
    records = []
    for p in paths:
        with open(p) as fh:
            records.extend(json.loads(line) for line in fh if line.strip())
    return [r for r in records if r.get("kind", "metrics") == "metrics"]


def emit_reward_curves(records, path):
    """Write ``iteration,variant,objective,value`` rows (mean over seeds).

    Each (variant, seed) series must cover iterations 0..max without gaps.
    """
    if not records:
        raise ValueError("empty metrics log")
    series = defaultdict(set)
    values = defaultdict(list)
    for r in records:
        series[(r["variant"], r.get("seed"))].add(r["iteration"])
        objectives = dict(r["reward_mean"], aggregate=r["aggregate_reward"])
        for name, v in objectives.items():
            values[(r["variant"], r["iteration"], name)].append(v)
    for (variant, seed), its in series.items():
        if its != set(range(max(its) + 1)):
            missing = sorted(set(range(max(its) + 1)) - its)
            raise ValueError(f"variant {variant} seed {seed}: missing iterations {missing[:10]}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "variant", "objective", "value"])
        for (variant, it, name) in sorted(values, key=lambda k: (k[0], k[1], k[2])):
            w.writerow([it, variant, name, repr(float(np.mean(values[(variant, it, name)])))])
    return path


def run_proxy_eval(cfg, net, out_dir=None):
    """Proxy report on ``proxy.n_trajectories`` fresh trajectories; appended to the metrics log."""
    schedule = schedule_from(cfg)
    rng = make_rng([cfg.proxy.seed, cfg.seed])
    n = cfg.proxy.n_trajectories
    z0 = rng.standard_normal((n, cfg.dim))
    conds = np.arange(n) % len(cfg.data.centers)
    if cfg.proxy.sampler == "ode":
        traj = ode_sample(net, schedule, z0, conds)
    else:
        traj = sde_sample(net, schedule, z0, conds, rng)
    agg = cfg.proxy.aggregate
    agg = int(agg) if str(agg).isdigit() else agg
    report = proxy_report(traj, net, schedule, cfg.reward_specs(), aggregate=agg)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "metrics.jsonl", "a") as fh:
            fh.write(_dumps({"kind": "proxy_report", "sampler": cfg.proxy.sampler,
                             "seed": cfg.seed, **report.to_dict()}) + "\n")
    return report
