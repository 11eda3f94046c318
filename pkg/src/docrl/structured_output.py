"""Parsing and rendering of the ``<think>``/``<answer>`` response schema.

A well-formed model response looks like::

    <think>reasoning</think>
    <answer>{"rephrase_question": "...", "bbox_2d": [x0, y0, x1, y1], "final_answer": "..."}</answer>

:func:`parse` never raises; malformed input yields a :class:`ParseFailure`
naming the first rule the text breaks.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Union

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
TAGS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)

REQUIRED_KEYS = ("rephrase_question", "bbox_2d", "final_answer")
TEMPLATE_PLACEHOLDER = "{Question}"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in absolute pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        problem = bbox_problem(self.as_list())
        if problem is not None:
            raise ValueError(problem)

    @classmethod
    def from_list(cls, coords) -> "BoundingBox":
        if len(coords) != 4:
            raise ValueError(f"expected 4 coordinates, got {len(coords)}")
        return cls(*(float(c) for c in coords))

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height


def bbox_problem(coords) -> str | None:
    """Describe why ``coords`` is not a valid box, or return None."""
    if len(coords) != 4:
        return f"expected 4 coordinates, got {len(coords)}"
    for c in coords:
        if isinstance(c, bool) or not isinstance(c, (int, float)):
            return f"coordinate {c!r} is not a number"
        try:
            finite = math.isfinite(c)
        except OverflowError:
            finite = False
        if not finite:
            return f"coordinate {c!r} is not finite"
        if c < 0:
            return f"coordinate {c!r} is negative"
    x0, y0, x1, y1 = coords
    if not x0 < x1:
        return f"x_min {x0} must be < x_max {x1}"
    if not y0 < y1:
        return f"y_min {y0} must be < y_max {y1}"
    return None


@dataclass(frozen=True)
class StructuredResponse:
    think_text: str
    rephrase_question: str
    bbox: BoundingBox
    final_answer: str

    def __post_init__(self) -> None:
        # the think body is emitted raw, so it cannot carry tag literals
        for tag in TAGS:
            if tag in self.think_text:
                raise ValueError(f"think_text may not contain {tag!r}")


class FailureKind(str, enum.Enum):
    MISSING_THINK_TAGS = "MissingThinkTags"
    MISSING_ANSWER_TAGS = "MissingAnswerTags"
    MALFORMED_JSON = "MalformedJson"
    MISSING_KEY = "MissingKey"
    INVALID_BBOX = "InvalidBBox"


@dataclass(frozen=True)
class ParseFailure:
    kind: FailureKind
    detail: str
    key: str | None = None  # set for MISSING_KEY


ParseOutcome = Union[StructuredResponse, ParseFailure]


def _single_block(text: str, open_tag: str, close_tag: str, start: int = 0):
    """Return (body, end_index) for exactly one open/close pair, else a reason string."""
    n_open, n_close = text.count(open_tag), text.count(close_tag)
    if n_open != 1 or n_close != 1:
        return f"expected one {open_tag}/{close_tag} pair, found {n_open}/{n_close}"
    i = text.find(open_tag)
    j = text.find(close_tag)
    if i < start:
        return f"{open_tag} appears before the preceding block"
    if j < i + len(open_tag):
        return f"{close_tag} precedes {open_tag}"
    return text[i + len(open_tag):j], j + len(close_tag)


def parse(raw_output: str) -> ParseOutcome:
    """Parse a raw model response into a :class:`StructuredResponse`.

    Text outside the tags is ignored, as are unknown JSON keys.
    """
    think = _single_block(raw_output, THINK_OPEN, THINK_CLOSE)
    if isinstance(think, str):
        return ParseFailure(FailureKind.MISSING_THINK_TAGS, think)
    think_text, think_end = think

    answer = _single_block(raw_output, ANSWER_OPEN, ANSWER_CLOSE, start=think_end)
    if isinstance(answer, str):
        return ParseFailure(FailureKind.MISSING_ANSWER_TAGS, answer)
    body, _ = answer

    try:
        payload = json.loads(body)
    except (ValueError, RecursionError) as exc:
        return ParseFailure(FailureKind.MALFORMED_JSON, str(exc))
    if not isinstance(payload, dict):
        return ParseFailure(FailureKind.MALFORMED_JSON,
                            f"answer body is a JSON {type(payload).__name__}, not an object")

    for key in REQUIRED_KEYS:
        if key not in payload:
            return ParseFailure(FailureKind.MISSING_KEY, f"missing key {key!r}", key=key)
        value = payload[key]
        if key == "bbox_2d":
            if not isinstance(value, list):
                return ParseFailure(FailureKind.INVALID_BBOX, "bbox_2d is not an array")
            problem = bbox_problem(value)
            if problem is not None:
                return ParseFailure(FailureKind.INVALID_BBOX, problem)
        elif not isinstance(value, str):
            return ParseFailure(FailureKind.MISSING_KEY,
                                f"key {key!r} must hold a string", key=key)

    return StructuredResponse(
        think_text=think_text,
        rephrase_question=payload["rephrase_question"],
        bbox=BoundingBox.from_list(payload["bbox_2d"]),
        final_answer=payload["final_answer"],
    )


def _coord(v: float):
    return int(v) if float(v).is_integer() and abs(v) < 2**53 else v


def render_answer_json(response: StructuredResponse) -> str:
    payload = {
        "rephrase_question": response.rephrase_question,
        "bbox_2d": [_coord(c) for c in response.bbox.as_list()],
        "final_answer": response.final_answer,
    }
    # '<' only occurs inside JSON strings, so escaping it keeps tag literals out of the body
    return json.dumps(payload, ensure_ascii=False).replace("<", "\\u003c")


def render(response: StructuredResponse) -> str:
    """Canonical text for ``response``; ``parse(render(r)) == r``."""
    return (f"{THINK_OPEN}{response.think_text}{THINK_CLOSE}\n"
            f"{ANSWER_OPEN}{render_answer_json(response)}{ANSWER_CLOSE}")


def load_template() -> str:
    text = resources.files("docrl").joinpath("assets/prompt_template.txt").read_text("utf-8")
    if TEMPLATE_PLACEHOLDER not in text:
        raise ValueError("prompt template has no {Question} placeholder")
    return text.rstrip("\n")


def build_prompt(question: str) -> str:
    if not question:
        raise ValueError("question must be non-empty")
    return load_template().replace(TEMPLATE_PLACEHOLDER, question)
