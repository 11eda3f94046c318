"""Run configuration: flat dotted keys in a YAML file.

Both ``grpo.beta: 0.04`` and nested ``grpo: {beta: 0.04}`` are accepted.
Unknown keys are rejected so typos fail before training starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from docrl.grpo import GrpoConfig
from docrl.rewards import RewardConfig, RewardWeights
from docrl.synth import EnvConfig

# Settings used for full-size vision-language models (not applied at toy scale):
# two epochs, batch size 2, AdamW with lr 1e-6, G = 6, beta = 0.04.
DEFAULTS: dict[str, object] = {
    "seed": 0,
    "grpo.group_size": 6,
    "grpo.beta": 0.04,
    "grpo.epsilon": 0.2,
    "grpo.std_eps": 1e-8,
    "grpo.loss_form": "simplified",
    "grpo.updates_per_generation": 1,
    "grpo.prompts_per_step": 12,
    "weights.format": 1.0,
    "weights.accuracy": 1.0,
    "weights.roi": 1.0,
    "weights.rephrase": 1.0,
    "roi.threshold": 0.5,
    "accuracy.mode": "exact",
    "policy.optimizer": "sgd",
    "policy.lr": 10.0,
    "policy.weight_decay": 0.0,
    "policy.bbox_bins": 16,
    "policy.malformed_templates": 4,
    "policy.prior": 4.0,
    "policy.prior_block": 4,
    "env.n_fields": 4,
    "env.canvas": [512, 512],
    "env.grid": 16,
    "env.vocab_seed": 0,
    "train.steps": 500,
}


class ConfigError(ValueError):
    pass


def flatten(obj: dict, prefix: str = "") -> dict[str, object]:
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=lambda: dict(DEFAULTS))

    def __post_init__(self) -> None:
        unknown = sorted(set(self.values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        try:
            self.grpo
            self.reward
            self.env
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if self["policy.optimizer"] not in ("sgd", "adamw"):
            raise ConfigError("policy.optimizer must be 'sgd' or 'adamw'")
        if not float(self["policy.lr"]) > 0:
            raise ConfigError("policy.lr must be > 0")

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: dict | None = None) -> "RunConfig":
        merged = dict(self.values)
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return RunConfig(merged)

    @property
    def seed(self) -> int:
        return int(self["seed"])

    @property
    def grpo(self) -> GrpoConfig:
        return GrpoConfig(
            group_size=int(self["grpo.group_size"]),
            beta=float(self["grpo.beta"]),
            epsilon=float(self["grpo.epsilon"]),
            std_eps=float(self["grpo.std_eps"]),
            loss_form=str(self["grpo.loss_form"]),
            updates_per_generation=int(self["grpo.updates_per_generation"]),
            prompts_per_step=int(self["grpo.prompts_per_step"]),
        )

    @property
    def reward(self) -> RewardConfig:
        weights = RewardWeights(*(float(self[f"weights.{k}"])
                                  for k in ("format", "accuracy", "roi", "rephrase")))
        return RewardConfig(weights, float(self["roi.threshold"]), str(self["accuracy.mode"]))

    @property
    def env(self) -> EnvConfig:
        w, h = self["env.canvas"]
        return EnvConfig(n_fields=int(self["env.n_fields"]), canvas=(int(w), int(h)),
                         grid=int(self["env.grid"]), vocab_seed=int(self["env.vocab_seed"]))


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = dict(DEFAULTS)
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
        values.update(flatten(raw))
    return RunConfig(values).with_overrides(overrides)
