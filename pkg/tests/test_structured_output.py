import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docrl.structured_output import (
    BoundingBox,
    FailureKind,
    ParseFailure,
    StructuredResponse,
    build_prompt,
    load_template,
    parse,
    render,
)

EXAMPLE = ('<think>r</think><answer>{"rephrase_question":"What is the man wearing while '
           'preparing to shoot the basketball near the hoop?","bbox_2d":[150,300,400,600],'
           '"final_answer":"answer here."}</answer>')


def answer(payload) -> str:
    return f"<think>t</think><answer>{json.dumps(payload)}</answer>"


GOOD = {"rephrase_question": "q", "bbox_2d": [1, 2, 3, 4], "final_answer": "a"}


def test_parse_template_example():
    out = parse(EXAMPLE)
    assert isinstance(out, StructuredResponse)
    assert out.bbox == BoundingBox(150, 300, 400, 600)
    assert out.final_answer == "answer here."
    assert out.think_text == "r"


def test_template_example_in_asset_parses():
    text = load_template()
    start = text.rindex("<think>")
    end = text.rindex("</answer>") + len("</answer>")
    out = parse(text[start:end])
    assert isinstance(out, StructuredResponse)
    assert out.bbox.as_list() == [150, 300, 400, 600]


@pytest.mark.parametrize("raw, kind", [
    ("<think>r</think>", FailureKind.MISSING_ANSWER_TAGS),
    ("no tags at all", FailureKind.MISSING_THINK_TAGS),
    ('<answer>{}</answer>', FailureKind.MISSING_THINK_TAGS),
    ("<think>a</think><think>b</think><answer>{}</answer>", FailureKind.MISSING_THINK_TAGS),
    ("<THINK>a</THINK><answer>{}</answer>", FailureKind.MISSING_THINK_TAGS),
    ("</think>a<think><answer>{}</answer>", FailureKind.MISSING_THINK_TAGS),
    ("<answer>{}</answer><think>a</think>", FailureKind.MISSING_ANSWER_TAGS),
    ("<think>a</think><answer>{}</answer><answer>{}</answer>", FailureKind.MISSING_ANSWER_TAGS),
    ("<think>a</think><answer>{not json</answer>", FailureKind.MALFORMED_JSON),
    ("<think>a</think><answer>[1, 2]</answer>", FailureKind.MALFORMED_JSON),
])
def test_parse_failure_kinds(raw, kind):
    out = parse(raw)
    assert isinstance(out, ParseFailure)
    assert out.kind is kind


def test_invalid_bbox_reversed_x():
    out = parse(answer({**GOOD, "bbox_2d": [400, 300, 150, 600]}))
    assert isinstance(out, ParseFailure) and out.kind is FailureKind.INVALID_BBOX


@pytest.mark.parametrize("bbox", [[1, 2, 3], [1, 2, 3, "4"], [1, 2, 3, True], [-1, 0, 3, 4],
                                  [0, 5, 3, 5], "1,2,3,4", [0, 0, 10 ** 400, 4]])
def test_invalid_bbox_variants(bbox):
    out = parse(answer({**GOOD, "bbox_2d": bbox}))
    assert isinstance(out, ParseFailure) and out.kind is FailureKind.INVALID_BBOX


def test_nan_bbox_rejected():
    raw = ('<think></think><answer>{"rephrase_question": "q", "bbox_2d": [0, 0, NaN, 4], '
           '"final_answer": "a"}</answer>')
    assert parse(raw).kind is FailureKind.INVALID_BBOX


def test_missing_key_reports_first_in_schema_order():
    payload = {"final_answer": "a"}
    out = parse(answer(payload))
    assert out.kind is FailureKind.MISSING_KEY and out.key == "rephrase_question"
    out = parse(answer({"rephrase_question": "q", "final_answer": "a"}))
    assert out.key == "bbox_2d"


def test_non_string_answer_is_missing_key():
    out = parse(answer({**GOOD, "final_answer": 42}))
    assert out.kind is FailureKind.MISSING_KEY and out.key == "final_answer"


def test_extra_keys_and_surrounding_text_tolerated():
    raw = "prefix " + answer({**GOOD, "confidence": 0.3}) + " suffix"
    out = parse(raw)
    assert isinstance(out, StructuredResponse)
    assert out.bbox.as_list() == [1.0, 2.0, 3.0, 4.0]


def test_render_round_trip_and_empty_think():
    resp = StructuredResponse("", "What is it?", BoundingBox(150, 300, 400, 600), 'say "hi"')
    text = render(resp)
    assert text.startswith("<think></think>\n<answer>")
    assert parse(text) == resp


def test_render_key_order():
    resp = StructuredResponse("t", "q", BoundingBox(0, 0, 1.5, 2), "a")
    body = render(resp).split("<answer>")[1].split("</answer>")[0]
    assert list(json.loads(body)) == ["rephrase_question", "bbox_2d", "final_answer"]


def test_render_escapes_tag_literals_in_strings():
    resp = StructuredResponse("t", "</answer>", BoundingBox(0, 0, 1, 1), "<think>")
    assert parse(render(resp)) == resp


def test_think_text_cannot_hold_tags():
    with pytest.raises(ValueError):
        StructuredResponse("<answer>", "q", BoundingBox(0, 0, 1, 1), "a")


coords = st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw):
    x0, y0 = draw(coords), draw(coords)
    w = draw(st.floats(min_value=1e-3, max_value=1e5))
    h = draw(st.floats(min_value=1e-3, max_value=1e5))
    return BoundingBox(x0, y0, x0 + w, y0 + h)


think_text = st.text().filter(lambda s: not any(t in s for t in
                                                ("<think>", "</think>", "<answer>", "</answer>")))


@settings(max_examples=300)
@given(think_text, st.text(), boxes(), st.text())
def test_round_trip_property(think, reph, box, final):
    resp = StructuredResponse(think, reph, box, final)
    out = parse(render(resp))
    assert out == resp


@settings(max_examples=300)
@given(st.text())
def test_parse_total_on_text(raw):
    out = parse(raw)
    assert isinstance(out, (StructuredResponse, ParseFailure))
    assert parse(raw) == out


@settings(max_examples=200)
@given(st.binary())
def test_parse_total_on_random_bytes(data):
    raw = data.decode("utf-8", errors="replace")
    wrapped = f"<think>{raw}</think><answer>{raw}</answer>"
    for text in (raw, wrapped):
        assert isinstance(parse(text), (StructuredResponse, ParseFailure))


def test_parse_deeply_nested_json_does_not_crash():
    raw = "<think></think><answer>" + "[" * 100000 + "]" * 100000 + "</answer>"
    assert parse(raw).kind is FailureKind.MALFORMED_JSON


def test_build_prompt():
    prompt = build_prompt("What is the man doing?")
    assert prompt.endswith('### Original question: "What is the man doing?"')
    assert prompt.startswith("You are given an original question.")
    assert "{Question}" not in prompt


def test_build_prompt_quotes_verbatim():
    q = 'Who said "hello"?'
    assert build_prompt(q).endswith(f'### Original question: "{q}"')


def test_build_prompt_empty_question():
    with pytest.raises(ValueError):
        build_prompt("")
