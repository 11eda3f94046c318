"""Rule-based verifiable rewards for structured document-QA responses.

Four components are scored per response: format, answer accuracy, RoI IoU
and rephrase quality. The total is their weighted sum. A response that fails
to parse scores zero on every component.
"""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

from docrl.structured_output import BoundingBox, ParseOutcome, StructuredResponse, parse

ACCURACY_MODES = ("exact", "contain")
_TERMINAL_PUNCT = ".,!?;"
_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class GroundTruth:
    answer: str
    roi: BoundingBox

    def __post_init__(self) -> None:
        if not self.answer:
            raise ValueError("ground-truth answer must be non-empty")


@dataclass(frozen=True)
class RewardWeights:
    format: float = 1.0
    accuracy: float = 1.0
    roi: float = 1.0
    rephrase: float = 1.0

    def __post_init__(self) -> None:
        for name in ("format", "accuracy", "roi", "rephrase"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"weight {name}={v} must be finite and >= 0")

    @property
    def total(self) -> float:
        return self.format + self.accuracy + self.roi + self.rephrase


@dataclass(frozen=True)
class RewardConfig:
    weights: RewardWeights = field(default_factory=RewardWeights)
    roi_threshold: float = 0.5
    accuracy_mode: str = "exact"

    def __post_init__(self) -> None:
        if not 0 < self.roi_threshold <= 1:
            raise ValueError(f"roi threshold {self.roi_threshold} outside (0, 1]")
        if self.accuracy_mode not in ACCURACY_MODES:
            raise ValueError(f"accuracy mode must be one of {ACCURACY_MODES}")


@dataclass(frozen=True)
class RewardBreakdown:
    r_format: float
    r_accuracy: float
    r_roi: float
    r_rephrase: float
    r_total: float
    iou: float
    sim_s: float
    ratio_r: float

    @classmethod
    def zero(cls) -> "RewardBreakdown":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and Unicode punctuation."""
    tokens, current = [], []
    for ch in text.lower():
        if ch.isspace() or unicodedata.category(ch).startswith("P"):
            if current:
                tokens.append("".join(current))
                current = []
        else:
            current.append(ch)
    if current:
        tokens.append("".join(current))
    return tokens


def normalize_answer(text: str) -> str:
    text = _WS.sub(" ", text.lower()).strip()
    return text.rstrip(_TERMINAL_PUNCT).strip()


def reward_format(outcome: ParseOutcome) -> float:
    return 1.0 if isinstance(outcome, StructuredResponse) else 0.0


def reward_accuracy(pred_answer: str, gt_answer: str, mode: str = "exact") -> float:
    pred, gt = normalize_answer(pred_answer), normalize_answer(gt_answer)
    if pred == gt:
        return 1.0
    if mode == "contain" and gt and gt in pred:
        return 1.0
    return 0.0


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def reward_roi(pred: BoundingBox | None, gt: BoundingBox, threshold: float = 0.5) -> float:
    if pred is None:
        return 0.0
    return 1.0 if iou(pred, gt) >= threshold else 0.0


def cosine_similarity_tf(q_a: str, q_b: str) -> float:
    """Cosine of term-frequency vectors; 0 when either side has no tokens."""
    ta, tb = Counter(tokenize(q_a)), Counter(tokenize(q_b))
    if not ta or not tb:
        return 0.0
    dot = sum(n * tb[t] for t, n in ta.items())
    norm = math.sqrt(sum(n * n for n in ta.values()) * sum(n * n for n in tb.values()))
    return min(1.0, dot / norm)


def new_word_ratio(q_orig: str, q_reph: str) -> float:
    """Distinct rephrase words absent from the original, over rephrase token count."""
    reph = tokenize(q_reph)
    if not reph:
        return 0.0
    seen = set(tokenize(q_orig))
    return len(set(reph) - seen) / len(reph)


def reward_rephrase(q_orig: str, q_reph: str | None, r_accuracy: float) -> float:
    if r_accuracy == 0 or q_reph is None:
        return 0.0
    return (cosine_similarity_tf(q_orig, q_reph) + new_word_ratio(q_orig, q_reph)) / 2


def score_response(response: ParseOutcome, question: str, gt: GroundTruth,
                   config: RewardConfig = RewardConfig()) -> RewardBreakdown:
    if not isinstance(response, StructuredResponse):
        return RewardBreakdown.zero()
    w = config.weights
    r_acc = reward_accuracy(response.final_answer, gt.answer, config.accuracy_mode)
    box_iou = iou(response.bbox, gt.roi)
    r_roi = 1.0 if box_iou >= config.roi_threshold else 0.0
    s = cosine_similarity_tf(question, response.rephrase_question)
    r = new_word_ratio(question, response.rephrase_question)
    r_reph = (s + r) / 2 if r_acc else 0.0
    total = w.format * 1.0 + w.accuracy * r_acc + w.roi * r_roi + w.rephrase * r_reph
    return RewardBreakdown(1.0, r_acc, r_roi, r_reph, total, box_iou, s, r)


def score(raw_output: str, question: str, gt: GroundTruth,
          config: RewardConfig = RewardConfig()) -> RewardBreakdown:
    """Parse ``raw_output`` and score it against ``gt``."""
    return score_response(parse(raw_output), question, gt, config)
