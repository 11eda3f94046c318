"""Slot-filling softmax policy with analytic gradients.

Instead of generating free text, the policy makes a fixed sequence of
categorical decisions ("tokens"): an output template, an answer value,
four box-edge bins and one include/skip flag per descriptor. Each decision
head is ``softmax(W_head @ features)``. :func:`render_action` turns the
decisions into response text in the structured output schema, so the same
parse and reward code judges it as it would a real model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from docrl.structured_output import (
    ANSWER_CLOSE,
    THINK_OPEN,
    BoundingBox,
    StructuredResponse,
    render,
    render_answer_json,
)
from docrl.synth import FeatureLayout, QASample, Vocabulary, question_field

CHECKPOINT_VERSION = 1
BOX_HEADS = ("x_min", "y_min", "x_max", "y_max")

# Malformed output variants, indexed from 1 (template 0 is the valid schema).
MALFORMED_TEMPLATES = (
    "drop_answer_close",
    "truncate_json",
    "drop_think_open",
    "drop_bbox_key",
)


class Policy(Protocol):
    def sample(self, features: np.ndarray, rng: np.random.Generator): ...

    def logprobs(self, features: np.ndarray, action) -> np.ndarray: ...

    def grad_logprob(self, features: np.ndarray, action, weights=None) -> dict: ...

    def snapshot(self) -> "Policy": ...

    def apply_update(self, grad: dict, optimizer: "Optimizer") -> None: ...


@dataclass(frozen=True)
class SlotAction:
    template_id: int
    answer_id: int
    bbox_bins: tuple[int, int, int, int]
    descriptor_mask: tuple[int, ...]

    @property
    def tokens(self) -> tuple[int, ...]:
        return (self.template_id, self.answer_id, *self.bbox_bins, *self.descriptor_mask)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def forward(params: dict[str, np.ndarray], features: np.ndarray) -> dict[str, np.ndarray]:
    """Per-head log-probabilities."""
    out = {}
    for name, w in params.items():
        if w.shape[1] != features.shape[0]:
            raise ValueError(f"head {name!r} expects {w.shape[1]} features, got {features.shape[0]}")
        out[name] = log_softmax(w @ features)
    return out


class SlotPolicy:
    def __init__(self, layout: FeatureLayout, bbox_bins: int = 16, n_malformed: int = 4,
                 n_descriptors: int = 2, prior: float = 0.0, prior_block: int = 4,
                 params: dict[str, np.ndarray] | None = None):
        if not 0 <= n_malformed <= len(MALFORMED_TEMPLATES):
            raise ValueError(f"n_malformed must be in [0, {len(MALFORMED_TEMPLATES)}]")
        self.layout = layout
        self.bbox_bins = bbox_bins
        self.n_malformed = n_malformed
        self.n_descriptors = n_descriptors
        self.prior = prior
        self.prior_block = prior_block
        self.head_sizes = {"template": 1 + n_malformed, "answer": len(layout.vocab.values)}
        for name in BOX_HEADS:
            self.head_sizes[name] = bbox_bins
        for j in range(n_descriptors):
            self.head_sizes[f"desc_{j}"] = 2
        self.params = params if params is not None else self.initial_params()

    @property
    def vocab(self) -> Vocabulary:
        return self.layout.vocab

    @property
    def head_names(self) -> list[str]:
        return list(self.head_sizes)

    def initial_params(self) -> dict[str, np.ndarray]:
        """Zero weights plus an optional coarse localization prior.

        The prior stands in for a pretrained model that knows roughly, but not
        precisely, where a field sits: each box head gets logit ``prior`` on
        every bin in the same ``prior_block``-wide block as the feature bin,
        so bins inside the block start out tied.
        """
        d = self.layout.dim
        params = {name: np.zeros((n, d)) for name, n in self.head_sizes.items()}
        if self.prior and self.bbox_bins == self.layout.bins:
            for name in BOX_HEADS:
                for f in range(self.layout.bins):
                    lo = f - f % self.prior_block
                    for b in range(lo, min(lo + self.prior_block, self.bbox_bins)):
                        params[name][b, self.layout.index(name, f)] = self.prior
        return params

    def distributions(self, features: np.ndarray) -> dict[str, np.ndarray]:
        return forward(self.params, features)

    def _action(self, picks: list[int]) -> SlotAction:
        return SlotAction(picks[0], picks[1], tuple(picks[2:6]), tuple(picks[6:]))

    def sample_from(self, dists: dict[str, np.ndarray], rng: np.random.Generator):
        picks, logp = [], []
        for name in self.head_names:
            lp = dists[name]
            cdf = np.cumsum(np.exp(lp))
            k = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(lp) - 1)
            picks.append(k)
            logp.append(lp[k])
        return self._action(picks), np.array(logp)

    def sample(self, features: np.ndarray, rng: np.random.Generator):
        return self.sample_from(self.distributions(features), rng)

    def greedy(self, features: np.ndarray) -> SlotAction:
        dists = self.distributions(features)
        return self._action([int(np.argmax(dists[n])) for n in self.head_names])

    def logprobs_from(self, dists: dict[str, np.ndarray], action: SlotAction) -> np.ndarray:
        tokens = action.tokens
        if len(tokens) != len(self.head_names):
            raise ValueError("action does not match the policy's heads")
        return np.array([dists[n][k] for n, k in zip(self.head_names, tokens)])

    def logprobs(self, features: np.ndarray, action: SlotAction) -> np.ndarray:
        return self.logprobs_from(self.distributions(features), action)

    def grad_logprob(self, features: np.ndarray, action: SlotAction, weights=None) -> dict:
        """Gradient of ``sum_t weights[t] * log pi(token_t)``; weights default to 1."""
        return self.grad_weighted(features, [action], None if weights is None else [weights])

    def grad_weighted(self, features: np.ndarray, actions: list[SlotAction], weights=None) -> dict:
        """Sum over ``actions`` of per-token weighted log-prob gradients.

        For a softmax-linear head the per-token gradient is
        ``(onehot(k) - p) outer features``; all actions share ``p`` here.
        """
        dists = self.distributions(features)
        n_heads = len(self.head_names)
        w = np.ones((len(actions), n_heads)) if weights is None else np.asarray(weights, float)
        grads = {}
        for h, name in enumerate(self.head_names):
            p = np.exp(dists[name])
            coef = -w[:, h].sum() * p
            for a, wa in zip(actions, w[:, h]):
                coef[a.tokens[h]] += wa
            grads[name] = np.outer(coef, features)
        return grads

    def snapshot(self) -> "SlotPolicy":
        frozen = {}
        for name, w in self.params.items():
            c = w.copy()
            c.setflags(write=False)
            frozen[name] = c
        return SlotPolicy(self.layout, self.bbox_bins, self.n_malformed,
                          self.n_descriptors, self.prior, self.prior_block, params=frozen)

    def apply_update(self, grad: dict, optimizer: "Optimizer") -> None:
        optimizer.step(self.params, grad)

    def decode_box(self, bins, width: float, height: float) -> BoundingBox:
        bx0, by0, bx1, by1 = bins
        bw, bh = width / self.bbox_bins, height / self.bbox_bins
        return BoundingBox(min(bx0, bx1) * bw, min(by0, by1) * bh,
                           (max(bx0, bx1) + 1) * bw, (max(by0, by1) + 1) * bh)


def rephrase(question: str, descriptors) -> str:
    if not descriptors:
        return question
    stem = question.rstrip().rstrip("?")
    return f"{stem} {' '.join(descriptors)}?"


def render_action(action: SlotAction, sample: QASample, policy: SlotPolicy) -> str:
    """Text the policy "emits" for ``action`` on ``sample``."""
    doc = sample.doc
    matched = question_field(doc, sample.question)
    available = matched.descriptors if matched is not None else ()
    chosen = [d for d, keep in zip(available, action.descriptor_mask) if keep]
    response = StructuredResponse(
        think_text=f"The question asks: {sample.question} Find the field that answers it.",
        rephrase_question=rephrase(sample.question, chosen),
        bbox=policy.decode_box(action.bbox_bins, doc.width, doc.height),
        final_answer=policy.vocab.values[action.answer_id],
    )
    text = render(response)
    if action.template_id == 0:
        return text
    variant = MALFORMED_TEMPLATES[action.template_id - 1]
    if variant == "drop_answer_close":
        return text.replace(ANSWER_CLOSE, "")
    if variant == "truncate_json":
        body = render_answer_json(response)
        return text.replace(body, body[:-1])
    if variant == "drop_think_open":
        return text.replace(THINK_OPEN, "", 1)
    payload = json.loads(render_answer_json(response))
    del payload["bbox_2d"]
    return text.replace(render_answer_json(response), json.dumps(payload, ensure_ascii=False))


@dataclass
class Optimizer:
    """SGD or AdamW over a dict of parameter arrays, updated in place."""

    kind: str = "sgd"
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape mismatch for {name!r}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name!r}")
        self.t += 1
        for name, g in grads.items():
            p = params[name]
            if self.kind == "sgd":
                p -= self.lr * g
                continue
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def grad_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def _arrays_to_json(arrays: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(a.shape), "data": a.ravel().tolist()} for k, a in arrays.items()}


def _arrays_from_json(obj: dict) -> dict[str, np.ndarray]:
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in obj.items()}


def checkpoint_dict(policy: SlotPolicy, optimizer: Optimizer | None = None) -> dict:
    vocab = policy.vocab
    ckpt = {
        "version": CHECKPOINT_VERSION,
        "vocab": {"keys": list(vocab.keys), "values": list(vocab.values),
                  "descriptors": list(vocab.descriptors)},
        "feature_bins": policy.layout.bins,
        "bbox_bins": policy.bbox_bins,
        "n_malformed": policy.n_malformed,
        "n_descriptors": policy.n_descriptors,
        "prior": policy.prior,
        "prior_block": policy.prior_block,
        "params": _arrays_to_json(policy.params),
        "optimizer": None,
    }
    if optimizer is not None:
        ckpt["optimizer"] = {
            "kind": optimizer.kind, "lr": optimizer.lr, "beta1": optimizer.beta1,
            "beta2": optimizer.beta2, "eps": optimizer.eps,
            "weight_decay": optimizer.weight_decay, "t": optimizer.t,
            "m": _arrays_to_json(optimizer.m), "v": _arrays_to_json(optimizer.v),
        }
    return ckpt


def save_checkpoint(path, policy: SlotPolicy, optimizer: Optimizer | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(policy, optimizer), sort_keys=True) + "\n",
                          encoding="utf-8")


def load_checkpoint(path) -> tuple[SlotPolicy, Optimizer | None]:
    ckpt = json.loads(Path(path).read_text(encoding="utf-8"))
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ckpt.get('version')!r}")
    v = ckpt["vocab"]
    vocab = Vocabulary(tuple(v["keys"]), tuple(v["values"]), tuple(v["descriptors"]))
    layout = FeatureLayout(vocab, bins=ckpt["feature_bins"])
    policy = SlotPolicy(layout, ckpt["bbox_bins"], ckpt["n_malformed"], ckpt["n_descriptors"],
                        ckpt["prior"], ckpt["prior_block"], params=_arrays_from_json(ckpt["params"]))
    opt = None
    if ckpt["optimizer"] is not None:
        o = dict(ckpt["optimizer"])
        m, v_ = _arrays_from_json(o.pop("m")), _arrays_from_json(o.pop("v"))
        opt = Optimizer(**o, m=m, v=v_)
    return policy, opt
