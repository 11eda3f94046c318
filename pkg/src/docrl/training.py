"""GRPO training loop over synthetic QA samples."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from docrl.config import RunConfig
from docrl.grpo import GroupRollout, GrpoConfig, compute_advantages, grpo_loss
from docrl.policy import Optimizer, SlotPolicy, grad_norm, render_action
from docrl.rewards import RewardBreakdown, RewardConfig, score
from docrl.synth import FeatureLayout, QASample, make_vocabulary, prompt_features


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepReport:
    step: int
    mean_reward: float
    mean_r_format: float
    mean_r_accuracy: float
    mean_r_roi: float
    mean_r_rephrase: float
    loss: float
    grad_norm: float
    mean_kl: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


def rollout_rng(seed: int, step: int, prompt: int, candidate: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, prompt, candidate])


def grpo_step(policy: SlotPolicy, ref_policy: SlotPolicy, optimizer: Optimizer,
              samples: list[QASample], features: list[np.ndarray], config: GrpoConfig,
              reward_config: RewardConfig, seed: int, step: int) -> StepReport:
    """Sample G outputs per prompt, score them, and update the policy.

    The policy as it stands at entry plays the old policy; ``ref_policy``
    must be a frozen snapshot.
    """
    groups: list[GroupRollout] = []
    breakdowns: list[RewardBreakdown] = []
    for p, (sample, x) in enumerate(zip(samples, features)):
        dists = policy.distributions(x)
        ref_dists = ref_policy.distributions(x)
        actions, logp_old, logp_ref, rewards = [], [], [], []
        for i in range(config.group_size):
            action, lp = policy.sample_from(dists, rollout_rng(seed, step, p, i))
            br = score(render_action(action, sample, policy), sample.question, sample.gt,
                       reward_config)
            actions.append(action)
            logp_old.append(lp)
            logp_ref.append(ref_policy.logprobs_from(ref_dists, action))
            rewards.append(br.r_total)
            breakdowns.append(br)
        rewards = np.array(rewards)
        groups.append(GroupRollout(logp=list(logp_old), logp_old=logp_old, logp_ref=logp_ref,
                                   rewards=rewards,
                                   advantages=compute_advantages(rewards, config.std_eps),
                                   actions=actions))

    first = None
    n = len(groups)
    for update in range(config.updates_per_generation):
        if update:
            for g, x in zip(groups, features):
                dists = policy.distributions(x)
                g.logp = [policy.logprobs_from(dists, a) for a in g.actions]
        total_loss, total_kl = 0.0, 0.0
        grads = None
        for g, x in zip(groups, features):
            res = grpo_loss(g, config)
            total_loss += res.loss / n
            total_kl += res.mean_kl / n
            gg = policy.grad_weighted(x, g.actions, np.stack(res.coefs) / n)
            if grads is None:
                grads = gg
            else:
                for k in grads:
                    grads[k] += gg[k]
        gnorm = grad_norm(grads)
        if not (math.isfinite(total_loss) and math.isfinite(gnorm)):
            raise NumericalError(f"step {step}: non-finite loss {total_loss} "
                                 f"(grad norm {gnorm})")
        if first is None:
            first = (total_loss, gnorm, total_kl)
        policy.apply_update(grads, optimizer)

    def mean(attr):
        return float(np.mean([getattr(b, attr) for b in breakdowns]))

    loss, gnorm, kl = first
    return StepReport(step, mean("r_total"), mean("r_format"), mean("r_accuracy"),
                      mean("r_roi"), mean("r_rephrase"), loss, gnorm, kl)


class Trainer:
    """Holds the live policy, its frozen reference and the optimizer."""

    def __init__(self, policy: SlotPolicy, optimizer: Optimizer, samples: list[QASample],
                 grpo: GrpoConfig = GrpoConfig(), rewards: RewardConfig = RewardConfig(),
                 seed: int = 0):
        if not samples:
            raise ValueError("training needs at least one sample")
        self.policy = policy
        self.ref_policy = policy.snapshot()
        self.optimizer = optimizer
        self.samples = samples
        self.features = [prompt_features(s, policy.layout) for s in samples]
        self.grpo = grpo
        self.rewards = rewards
        self.seed = seed
        self.step_count = 0

    def batch_indices(self, step: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, step, 0xBA7C4])
        k = min(self.grpo.prompts_per_step, len(self.samples))
        return rng.choice(len(self.samples), size=k, replace=False)

    def step(self) -> StepReport:
        idx = self.batch_indices(self.step_count)
        report = grpo_step(self.policy, self.ref_policy, self.optimizer,
                           [self.samples[i] for i in idx], [self.features[i] for i in idx],
                           self.grpo, self.rewards, self.seed, self.step_count)
        self.step_count += 1
        return report

    def train(self, steps: int, log=None) -> list[StepReport]:
        reports = []
        for _ in range(steps):
            r = self.step()
            reports.append(r)
            if log is not None:
                log.write(r.to_json() + "\n")
        return reports


def predict(policy: SlotPolicy, samples: list[QASample]) -> list[dict]:
    """Greedy (argmax) predictions as prediction records."""
    out = []
    for s in samples:
        action = policy.greedy(prompt_features(s, policy.layout))
        out.append({"id": s.id, "raw_output": render_action(action, s, policy)})
    return out


def policy_from_config(cfg: RunConfig) -> tuple[SlotPolicy, Optimizer]:
    layout = FeatureLayout(make_vocabulary(cfg.env.vocab_seed), bins=cfg.env.grid)
    policy = SlotPolicy(layout, bbox_bins=int(cfg["policy.bbox_bins"]),
                        n_malformed=int(cfg["policy.malformed_templates"]),
                        prior=float(cfg["policy.prior"]),
                        prior_block=int(cfg["policy.prior_block"]))
    optimizer = Optimizer(str(cfg["policy.optimizer"]), float(cfg["policy.lr"]),
                          weight_decay=float(cfg["policy.weight_decay"]))
    return policy, optimizer
