"""Group-relative advantages and the GRPO objective.

Both loss forms return the scalar loss and, per candidate, per-token
coefficients ``c[i][t]`` such that the loss gradient equals
``sum_i sum_t c[i][t] * grad log pi_theta(o_it)``. A policy that can weight
its log-prob gradient per token therefore gets the exact analytic gradient
without autodiff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

LOSS_FORMS = ("simplified", "clipped")


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 6
    beta: float = 0.04
    epsilon: float = 0.2
    std_eps: float = 1e-8
    loss_form: str = "simplified"
    updates_per_generation: int = 1
    prompts_per_step: int = 8

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        for name in ("beta", "epsilon", "std_eps"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.epsilon <= 0 or self.std_eps <= 0:
            raise ValueError("epsilon and std_eps must be > 0")
        if self.loss_form not in LOSS_FORMS:
            raise ValueError(f"loss_form must be one of {LOSS_FORMS}")
        if self.updates_per_generation < 1 or self.prompts_per_step < 1:
            raise ValueError("updates_per_generation and prompts_per_step must be >= 1")


@dataclass
class GroupRollout:
    """One prompt's G candidates with their per-token log-probs.

    ``logp`` holds the current policy's log-probs and is refreshed between
    optimizer updates; ``logp_old`` and ``logp_ref`` stay fixed.
    """

    logp: list[np.ndarray]
    logp_old: list[np.ndarray]
    logp_ref: list[np.ndarray]
    rewards: np.ndarray
    advantages: np.ndarray
    actions: list = field(default_factory=list)

    def __post_init__(self) -> None:
        g = len(self.logp)
        if not (len(self.logp_old) == len(self.logp_ref) == len(self.rewards)
                == len(self.advantages) == g):
            raise ValueError("group fields disagree on group size")
        for cur, old, ref in zip(self.logp, self.logp_old, self.logp_ref):
            if not len(cur) == len(old) == len(ref) or len(cur) == 0:
                raise ValueError("log-prob sequences must be non-empty and equal length")

    @property
    def size(self) -> int:
        return len(self.logp)


class LossResult(NamedTuple):
    loss: float
    coefs: list[np.ndarray]
    mean_kl: float


def compute_advantages(rewards: Sequence[float], std_eps: float = 1e-8) -> np.ndarray:
    """Standardize rewards within the group using the population std."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("need at least 2 rewards in a group")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    centered = r - r.mean()
    std = float(np.sqrt(np.mean(centered ** 2)))
    if std < std_eps:
        return np.zeros_like(r)
    return centered / std


def broadcast_advantage(advantage: float, length: int) -> np.ndarray:
    if length < 1:
        raise ValueError("sequence length must be >= 1")
    return np.full(length, float(advantage))


def kl_estimate(logp_ref, logp_cur):
    """Per-token ``x - log x - 1`` with ``x = pi_ref / pi_theta``.

    ``expm1(d) - d`` with ``d = log x`` avoids cancellation near ``x = 1``.
    """
    d = np.asarray(logp_ref, dtype=np.float64) - np.asarray(logp_cur, dtype=np.float64)
    out = np.expm1(d) - d
    return np.maximum(out, 0.0) if out.ndim else float(max(out, 0.0))


def _kl_terms(logp: np.ndarray, logp_ref: np.ndarray):
    d = logp_ref - logp
    kl = np.maximum(np.expm1(d) - d, 0.0)
    # d/d(logp) of expm1(d) - d
    dkl = -np.expm1(d)
    return kl, dkl


def grpo_loss_simplified(group: GroupRollout, beta: float) -> LossResult:
    """Single-update GRPO loss.

    The advantage term is ``A * pi_theta / stopgrad(pi_theta)``, with
    ``logp_old`` as the detached copy. Its value is ``A`` while the policy has
    not moved since sampling, and its gradient is ``A * grad log pi_theta``.
    """
    g = group.size
    loss, kl_sum, n_tok = 0.0, 0.0, 0
    coefs = []
    for i in range(g):
        lp, lo, lr = (np.asarray(x) for x in (group.logp[i], group.logp_old[i], group.logp_ref[i]))
        adv = broadcast_advantage(group.advantages[i], len(lp))
        weighted = np.exp(lp - lo) * adv
        kl, dkl = _kl_terms(lp, lr)
        scale = 1.0 / (g * len(lp))
        loss -= scale * float(np.sum(weighted - beta * kl))
        coefs.append(-scale * (weighted - beta * dkl))
        kl_sum += float(kl.sum())
        n_tok += len(lp)
    return LossResult(loss, coefs, kl_sum / n_tok)


def grpo_loss_clipped(group: GroupRollout, epsilon: float, beta: float) -> LossResult:
    """PPO-style clipped surrogate against ``logp_old`` plus the KL penalty."""
    g = group.size
    loss, kl_sum, n_tok = 0.0, 0.0, 0
    coefs = []
    for i in range(g):
        lp, lo, lr = (np.asarray(x) for x in (group.logp[i], group.logp_old[i], group.logp_ref[i]))
        adv = broadcast_advantage(group.advantages[i], len(lp))
        ratio = np.exp(lp - lo)
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv
        surrogate = np.minimum(unclipped, clipped)
        # gradient flows only where the unclipped branch is the minimum
        active = unclipped <= clipped
        kl, dkl = _kl_terms(lp, lr)
        scale = 1.0 / (g * len(lp))
        loss -= scale * float(np.sum(surrogate - beta * kl))
        coefs.append(-scale * (np.where(active, unclipped, 0.0) - beta * dkl))
        kl_sum += float(kl.sum())
        n_tok += len(lp)
    return LossResult(loss, coefs, kl_sum / n_tok)


def grpo_loss(group: GroupRollout, config: GrpoConfig) -> LossResult:
    if config.loss_form == "clipped":
        return grpo_loss_clipped(group, config.epsilon, config.beta)
    return grpo_loss_simplified(group, config.beta)
