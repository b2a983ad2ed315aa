"""Command line entry point: ``otca {pretrain,train,ablate,proxy-eval,curves}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from otca import harness
from otca.config import VARIANTS, ExperimentConfig, load_config
from otca.exceptions import ConfigError, NumericalError
from otca.flow_env import load_checkpoint, save_checkpoint

log = logging.getLogger("otca")


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "variant", None):
        cfg = cfg.with_variant(args.variant)
    elif cfg.variant:
        cfg = cfg.with_variant(cfg.variant)
    return cfg


def cmd_pretrain(args):
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net, val_loss = harness.pretrain(cfg)
    save_checkpoint(out / "pretrained.ckpt", net, harness.schedule_from(cfg))
    print(json.dumps({"checkpoint": str(out / "pretrained.ckpt"), "val_loss": val_loss}))


def cmd_train(args):
    cfg = _config(args)
    summary = harness.run_experiment(cfg, args.out)
    print(json.dumps(summary["final_eval"], sort_keys=True))


def cmd_ablate(args):
    cfg = _config(args)
    seeds = [args.seed] if args.seed is not None else cfg.ablation.seeds
    variants = [args.variant] if args.variant else cfg.ablation.variants
    configs = [cfg.replace(seed=s).with_variant(v) for v in variants for s in seeds]
    rows = harness.compare_variants(configs, args.out)
    records = harness.read_metrics(sorted(Path(args.out).glob("*/metrics.jsonl")))
    harness.emit_reward_curves(records, Path(args.out) / "reward_curves.csv")
    print((Path(args.out) / "ablation.md").read_text(), end="")
    return rows


def cmd_proxy_eval(args):
    cfg = _config(args)
    out = Path(args.out)
    ckpt = args.checkpoint
    if ckpt is None:
        for name in ("final.ckpt", "pretrained.ckpt"):
            if (out / name).exists():
                ckpt = out / name
                break
    if ckpt is not None:
        net, _ = load_checkpoint(ckpt)
    else:
        net, _ = harness.pretrain(cfg)
    report = harness.run_proxy_eval(cfg, net, out)
    print(json.dumps(report.to_dict(), sort_keys=True))


def cmd_curves(args):
    out = Path(args.out)
    paths = sorted(out.glob("**/metrics.jsonl"))
    if not paths:
        raise ConfigError(f"no metrics.jsonl found under {out}")
    path = harness.emit_reward_curves(harness.read_metrics(paths), out / "reward_curves.csv")
    print(path)


def build_parser():
    p = argparse.ArgumentParser(prog="otca", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    commands = {
        "pretrain": (cmd_pretrain, "fit the flow model and save pretrained.ckpt"),
        "train": (cmd_train, "GRPO training of one variant"),
        "ablate": (cmd_ablate, "all variants x seeds, ablation table and curves"),
        "proxy-eval": (cmd_proxy_eval, "step-alignment vs reward-gain metrics"),
        "curves": (cmd_curves, "export reward curves from metrics logs"),
    }
    for name, (func, help_) in commands.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="runs/default", help="output directory")
        sp.add_argument("--variant", choices=sorted(VARIANTS))
        if name == "proxy-eval":
            sp.add_argument("--checkpoint", help="flow checkpoint (default: OUT/final.ckpt)")
        sp.set_defaults(func=func)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
