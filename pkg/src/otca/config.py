"""Experiment configuration (YAML, nested sections, unknown keys rejected)."""
import copy
import dataclasses
from dataclasses import dataclass, field

import yaml

from otca.exceptions import ConfigError
from otca.rewards import RewardSpec, default_suite

VARIANTS = {
    "baseline": {"uniform_w": True, "uniform_c": True},
    "tcd": {"uniform_w": False, "uniform_c": True},
    "moca": {"uniform_w": True, "uniform_c": False},
    "full": {"uniform_w": False, "uniform_c": False},
}


def _spec_dict(spec):
    return {k: list(v) if isinstance(v, tuple) else v
            for k, v in dataclasses.asdict(spec).items() if v is not None}


@dataclass
class DataConfig:
    centers: list = field(default_factory=lambda: [[[-3.0, 0.0], [3.0, 0.0]],
                                                   [[0.0, -3.0], [0.0, 3.0]]])
    std: float = 0.3


@dataclass
class NetworkConfig:
    widths: list = field(default_factory=lambda: [32, 32])


@dataclass
class ScheduleConfig:
    eta: float = 0.3
    steps: int = 16
    noise_form: str = "sqrt_ratio"
    noise_cap: float = 1.0
    delta: float = 1e-3


@dataclass
class PretrainConfig:
    steps: int = 3000
    batch_size: int = 256
    learning_rate: float = 3e-3
    dataset_size: int = 20000
    checkpoint: str = None


@dataclass
class GRPOConfig:
    group_size: int = 12
    groups_per_iteration: int = 4
    iterations: int = 200
    learning_rate: float = 1e-3
    clip_eps: float = 1e-4
    clip_mode: str = "halfwidth"
    shared_initial_noise: bool = True


@dataclass
class CreditSection:
    tcd_eps: float = 1e-4
    moca_eps: float = 1e-8
    explore_eps: float = 1e-6
    w_min: float = 0.0
    uniform_w: bool = False
    uniform_c: bool = False
    exploration: bool = True


@dataclass
class EvaluationConfig:
    n_samples: int = 512
    seed: int = 2024


@dataclass
class ProxyConfig:
    n_trajectories: int = 128
    sampler: str = "ode"
    aggregate: str = "mean"
    seed: int = 7


@dataclass
class AblationConfig:
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    variants: list = field(default_factory=lambda: ["baseline", "tcd", "moca", "full"])


@dataclass
class ExperimentConfig:
    seed: int = 0
    dim: int = 2
    variant: str = "full"
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    grpo: GRPOConfig = field(default_factory=GRPOConfig)
    credit: CreditSection = field(default_factory=CreditSection)
    rewards: list = field(default_factory=lambda: [_spec_dict(s) for s in default_suite()])
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def reward_specs(self):
        return [RewardSpec.from_dict(r) for r in self.rewards]

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        out = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(out, k, v)
        return out

    def with_variant(self, variant):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
        out = self.replace(variant=variant)
        for k, v in VARIANTS[variant].items():
            setattr(out.credit, k, v)
        return out


def _coerce(ftype, value, path):
    # YAML 1.1 reads "1e-4" as a string
    if value is None or ftype not in (float, int, bool, str):
        return value
    if ftype is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    try:
        out = ftype(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: expected {ftype.__name__}, got {value!r}") from exc
    if ftype is int and isinstance(value, float) and value != out:
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return out


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(ftype):
            kwargs[name] = _build(ftype, value, path)
        else:
            kwargs[name] = _coerce(ftype, value, path)
    return cls(**kwargs)


def validate(cfg):
    if cfg.schedule.steps < 2:
        raise ConfigError("schedule.steps (T) must be >= 2")
    if cfg.grpo.group_size < 2:
        raise ConfigError("grpo.group_size (G) must be >= 2")
    if cfg.grpo.clip_mode not in ("halfwidth", "ratio_floor"):
        raise ConfigError(f"grpo.clip_mode must be halfwidth or ratio_floor, got {cfg.grpo.clip_mode!r}")
    if cfg.proxy.sampler not in ("ode", "sde"):
        raise ConfigError("proxy.sampler must be ode or sde")
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}")
    if not 0.0 <= cfg.credit.w_min <= 1.0:
        raise ConfigError("credit.w_min must lie in [0, 1]")
    if any(len(c) == 0 or any(len(m) != cfg.dim for m in c) for c in cfg.data.centers):
        raise ConfigError("data.centers must list modes of dimension `dim` per condition")
    for name in ("tcd_eps", "moca_eps", "explore_eps"):
        if getattr(cfg.credit, name) <= 0:
            raise ConfigError(f"credit.{name} must be positive")
    try:
        cfg.reward_specs()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"rewards: {exc}") from exc
    return cfg


def from_dict(data):
    return validate(_build(ExperimentConfig, data or {}, ""))


def load_config(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(data)


def dump_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
