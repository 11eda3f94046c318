"""Central finite-difference checks of the GRPO loss gradient on the slot policy."""

import numpy as np

from docrl.grpo import GroupRollout, compute_advantages, grpo_loss_clipped, grpo_loss_simplified
from docrl.policy import SlotPolicy


def random_policy(layout, rng, scale=0.5) -> SlotPolicy:
    policy = SlotPolicy(layout, bbox_bins=layout.bins)
    for w in policy.params.values():
        w[...] = rng.normal(scale=scale, size=w.shape)
    return policy


def make_group(policy, old_policy, ref_policy, x, rng, group_size=6):
    dists = old_policy.distributions(x)
    actions, logp_old = [], []
    for _ in range(group_size):
        a, lp = old_policy.sample_from(dists, rng)
        actions.append(a)
        logp_old.append(lp)
    rewards = rng.normal(size=group_size)
    return GroupRollout(
        logp=[policy.logprobs(x, a) for a in actions],
        logp_old=logp_old,
        logp_ref=[ref_policy.logprobs(x, a) for a in actions],
        rewards=rewards,
        advantages=compute_advantages(rewards),
        actions=actions,
    )


def loss_fn(form, beta, epsilon):
    if form == "simplified":
        return lambda g: grpo_loss_simplified(g, beta)
    return lambda g: grpo_loss_clipped(g, epsilon, beta)


def analytic_grad(policy, group, x, fn) -> dict:
    group.logp = [policy.logprobs(x, a) for a in group.actions]
    res = fn(group)
    return policy.grad_weighted(x, group.actions, np.stack(res.coefs))


def oracle_loss(params, x, group, form, beta, epsilon) -> np.longdouble:
    """GRPO loss recomputed from scratch in extended precision."""
    ld = np.longdouble
    x = x.astype(ld)
    logps = {}
    for name, w in params.items():
        z = w @ x
        z = z - z.max()
        logps[name] = z - np.log(np.sum(np.exp(z)))
    heads = list(params)
    total = ld(0)
    g = len(group.actions)
    for action, old, ref, adv in zip(group.actions, group.logp_old, group.logp_ref, group.advantages):
        lp = np.array([logps[h][k] for h, k in zip(heads, action.tokens)])
        ratio = np.exp(lp - old.astype(ld))
        surrogate = ratio * ld(adv)
        if form == "clipped":
            surrogate = np.minimum(surrogate, np.clip(ratio, 1 - epsilon, 1 + epsilon) * ld(adv))
        d = ref.astype(ld) - lp
        kl = np.exp(d) - d - 1
        total -= np.sum(surrogate - ld(beta) * kl) / (g * len(lp))
    return total


def fd_grad(policy, group, x, form, beta, epsilon, h=1e-5) -> dict:
    """Central differences of :func:`oracle_loss`."""
    params = {k: w.astype(np.longdouble) for k, w in policy.params.items()}
    out = {}
    for name, w in params.items():
        g = np.zeros(w.shape)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + h
            up = oracle_loss(params, x, group, form, beta, epsilon)
            w[idx] = orig - h
            down = oracle_loss(params, x, group, form, beta, epsilon)
            w[idx] = orig
            g[idx] = float((up - down) / (2 * np.longdouble(h)))
        out[name] = g
    return out


def max_rel_error(a: dict, b: dict, floor=1e-8) -> float:
    """Largest elementwise |a - b| / max(|a|, |b|, floor)."""
    worst = 0.0
    for k in a:
        denom = np.maximum(np.maximum(np.abs(a[k]), np.abs(b[k])), floor)
        worst = max(worst, float(np.max(np.abs(a[k] - b[k]) / denom)))
    return worst
