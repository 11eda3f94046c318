"""Synthetic documents and QA samples with verifiable ground truth.

Documents are abstract lists of key/value fields placed on a layout grid
over a pixel canvas. Each question asks for one field's value, and the
field's box is the ground-truth region of interest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from docrl.rewards import GroundTruth, iou, tokenize
from docrl.structured_output import BoundingBox

KEY_POOL = (
    "total", "date", "vendor", "customer", "phone", "email", "address", "tax",
    "subtotal", "invoice", "account", "reference", "due", "currency", "discount", "balance",
)
VALUE_POOL = (
    "42", "17.50", "acme corp", "globex", "2024-03-01", "usd", "eur", "north wing",
    "paid", "pending", "8%", "1,250.00", "initech", "555-0199", "net 30", "gbp",
    "ops@acme.io", "12 elm street", "overdue", "0.00", "hooli", "2023-11-15", "vat", "99.99",
)
VERTICAL = ("top", "middle", "bottom")
HORIZONTAL = ("left", "center", "right")
STYLES = ("in bold", "in the header", "beside the logo", "in the table", "underlined",
          "in small print")
QUESTION_WORDS = ("what", "is", "the")
OOV = "<oov>"


@dataclass(frozen=True)
class Vocabulary:
    keys: tuple[str, ...]
    values: tuple[str, ...]
    descriptors: tuple[str, ...]

    @property
    def question_tokens(self) -> tuple[str, ...]:
        return QUESTION_WORDS + self.keys + (OOV,)


def make_vocabulary(vocab_seed: int = 0, n_keys: int = 12, n_values: int = 20) -> Vocabulary:
    rng = np.random.default_rng([vocab_seed, 0xD0C])
    keys = tuple(sorted(rng.choice(KEY_POOL, size=n_keys, replace=False).tolist()))
    values = tuple(sorted(rng.choice(VALUE_POOL, size=n_values, replace=False).tolist()))
    positional = tuple(f"near the {v} {h}" for v in VERTICAL for h in HORIZONTAL)
    return Vocabulary(keys, values, positional + STYLES)


@dataclass(frozen=True)
class EnvConfig:
    n_fields: int = 4
    canvas: tuple[int, int] = (512, 512)
    grid: int = 16
    vocab_seed: int = 0
    min_cells: tuple[int, int] = (3, 1)  # (width, height) in grid cells
    max_cells: tuple[int, int] = (6, 2)
    max_retries: int = 200

    def __post_init__(self) -> None:
        if self.n_fields < 1:
            raise ValueError("n_fields must be >= 1")
        if self.canvas[0] < 64 or self.canvas[1] < 64:
            raise ValueError("canvas must be at least 64x64")
        if self.grid < 1:
            raise ValueError("grid must be >= 1")


@dataclass(frozen=True)
class Field:
    key: str
    value: str
    bbox: BoundingBox
    descriptors: tuple[str, ...] = ()


@dataclass(frozen=True)
class SynthDoc:
    width: int
    height: int
    fields: tuple[Field, ...]

    def field(self, key: str) -> Field:
        for f in self.fields:
            if f.key == key:
                return f
        raise KeyError(key)


@dataclass(frozen=True)
class QASample:
    id: str
    doc: SynthDoc
    question: str
    gt: GroundTruth
    target_key: str


def check_document(doc: SynthDoc) -> list[str]:
    """Return the list of invariant violations (empty when valid)."""
    problems = []
    keys = [f.key for f in doc.fields]
    if len(set(keys)) != len(keys):
        problems.append("duplicate keys")
    for f in doc.fields:
        b = f.bbox
        if b.x_max > doc.width or b.y_max > doc.height:
            problems.append(f"field {f.key!r} leaves the canvas")
    for i, a in enumerate(doc.fields):
        for b in doc.fields[i + 1:]:
            if iou(a.bbox, b.bbox) > 0.3:
                problems.append(f"fields {a.key!r} and {b.key!r} overlap")
    return problems


def _describe(bbox: BoundingBox, width: int, height: int) -> str:
    cx = (bbox.x_min + bbox.x_max) / 2 / width
    cy = (bbox.y_min + bbox.y_max) / 2 / height
    v = VERTICAL[min(int(cy * 3), 2)]
    h = HORIZONTAL[min(int(cx * 3), 2)]
    return f"near the {v} {h}"


def gen_document(rng: np.random.Generator, config: EnvConfig = EnvConfig(),
                 vocab: Vocabulary | None = None) -> SynthDoc:
    vocab = vocab or make_vocabulary(config.vocab_seed)
    if config.n_fields > len(vocab.keys):
        raise ValueError(f"n_fields {config.n_fields} exceeds key vocabulary")
    width, height = config.canvas
    g = config.grid
    cw, ch = width / g, height / g
    occupied = np.zeros((g, g), dtype=bool)
    keys = rng.choice(len(vocab.keys), size=config.n_fields, replace=False)
    fields = []
    for k in keys:
        for _ in range(config.max_retries):
            w = int(rng.integers(config.min_cells[0], config.max_cells[0] + 1))
            h = int(rng.integers(config.min_cells[1], config.max_cells[1] + 1))
            if w > g or h > g:
                continue
            x = int(rng.integers(0, g - w + 1))
            y = int(rng.integers(0, g - h + 1))
            if not occupied[y:y + h, x:x + w].any():
                occupied[y:y + h, x:x + w] = True
                break
        else:
            raise RuntimeError(f"could not place {config.n_fields} fields after "
                               f"{config.max_retries} retries; canvas too small")
        bbox = BoundingBox(x * cw, y * ch, (x + w) * cw, (y + h) * ch)
        value = vocab.values[int(rng.integers(len(vocab.values)))]
        style = STYLES[int(rng.integers(len(STYLES)))]
        fields.append(Field(vocab.keys[k], value, bbox, (_describe(bbox, width, height), style)))
    return SynthDoc(width, height, tuple(fields))


def question_for(key: str) -> str:
    return f"What is the {key}?"


def gen_sample(doc: SynthDoc, rng: np.random.Generator, sample_id: str = "0") -> QASample:
    target = doc.fields[int(rng.integers(len(doc.fields)))]
    return QASample(sample_id, doc, question_for(target.key),
                    GroundTruth(target.value, target.bbox), target.key)


def gen_dataset(n: int, seed: int, config: EnvConfig = EnvConfig(),
                prefix: str = "s") -> list[QASample]:
    """``n`` samples; sample ``i`` depends only on ``(seed, i)``."""
    vocab = make_vocabulary(config.vocab_seed)
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        doc = gen_document(rng, config, vocab)
        out.append(gen_sample(doc, rng, f"{prefix}{seed}-{i:06d}"))
    return out


def question_field(doc: SynthDoc, question: str) -> Field | None:
    """The document field whose key is mentioned in ``question``."""
    tokens = set(tokenize(question))
    matches = [f for f in doc.fields if f.key in tokens]
    if not matches:
        return None
    return min(matches, key=lambda f: f.key)


@dataclass(frozen=True)
class FeatureLayout:
    """Offsets of each block inside the feature vector.

    Blocks, in order: bias; question token counts; document key indicators;
    matched-field value one-hot (plus OOV); matched-field box bins for
    x_min, y_min, x_max, y_max; matched-field descriptor indicators.
    The matched field is the one whose key the question mentions.
    """

    vocab: Vocabulary
    bins: int = 16
    offsets: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        sizes = {
            "bias": 1,
            "question": len(self.vocab.question_tokens),
            "keys": len(self.vocab.keys),
            "value": len(self.vocab.values) + 1,
            "x_min": self.bins, "y_min": self.bins, "x_max": self.bins, "y_max": self.bins,
            "descriptors": len(self.vocab.descriptors),
        }
        offsets, pos = {}, 0
        for name, size in sizes.items():
            offsets[name] = (pos, size)
            pos += size
        object.__setattr__(self, "offsets", offsets)

    @property
    def dim(self) -> int:
        start, size = self.offsets["descriptors"]
        return start + size

    def index(self, block: str, i: int) -> int:
        start, size = self.offsets[block]
        if not 0 <= i < size:
            raise IndexError(f"{block}[{i}] out of range {size}")
        return start + i


def box_bins(bbox: BoundingBox, width: float, height: float, bins: int) -> tuple[int, int, int, int]:
    """Bin indices of the box edges; max edges map to the last covered bin."""
    def lo(v, extent):
        return min(bins - 1, max(0, int(np.floor(v / extent * bins + 1e-9))))

    def hi(v, extent):
        return min(bins - 1, max(0, int(np.ceil(v / extent * bins - 1e-9)) - 1))

    return (lo(bbox.x_min, width), lo(bbox.y_min, height),
            hi(bbox.x_max, width), hi(bbox.y_max, height))


def prompt_features(sample: QASample, layout: FeatureLayout) -> np.ndarray:
    vocab = layout.vocab
    x = np.zeros(layout.dim)
    x[layout.index("bias", 0)] = 1.0
    qindex = {t: i for i, t in enumerate(vocab.question_tokens)}
    for tok in tokenize(sample.question):
        x[layout.index("question", qindex.get(tok, qindex[OOV]))] += 1.0
    kindex = {k: i for i, k in enumerate(vocab.keys)}
    for f in sample.doc.fields:
        if f.key in kindex:
            x[layout.index("keys", kindex[f.key])] = 1.0
    matched = question_field(sample.doc, sample.question)
    if matched is not None:
        vindex = {v: i for i, v in enumerate(vocab.values)}
        x[layout.index("value", vindex.get(matched.value, len(vocab.values)))] = 1.0
        edges = box_bins(matched.bbox, sample.doc.width, sample.doc.height, layout.bins)
        for name, b in zip(("x_min", "y_min", "x_max", "y_max"), edges):
            x[layout.index(name, b)] = 1.0
        dindex = {d: i for i, d in enumerate(vocab.descriptors)}
        for d in matched.descriptors:
            if d in dindex:
                x[layout.index("descriptors", dindex[d])] = 1.0
    return x


def sample_to_record(sample: QASample) -> dict:
    def box(b: BoundingBox):
        return [b.x_min, b.y_min, b.x_max, b.y_max]

    return {
        "id": sample.id,
        "question": sample.question,
        "answer": sample.gt.answer,
        "bbox": box(sample.gt.roi),
        "doc": {
            "width": sample.doc.width,
            "height": sample.doc.height,
            "fields": [{"key": f.key, "value": f.value, "bbox": box(f.bbox),
                        "descriptors": list(f.descriptors)} for f in sample.doc.fields],
        },
    }


def sample_from_record(record: dict) -> QASample:
    d = record["doc"]
    fields = tuple(Field(f["key"], f["value"], BoundingBox.from_list(f["bbox"]),
                         tuple(f["descriptors"])) for f in d["fields"])
    doc = SynthDoc(int(d["width"]), int(d["height"]), fields)
    roi = BoundingBox.from_list(record["bbox"])
    target = next((f for f in fields if f.bbox == roi and f.value == record["answer"]), None)
    if target is None:
        raise ValueError(f"record {record['id']!r}: ground truth matches no document field")
    return QASample(record["id"], doc, record["question"],
                    GroundTruth(record["answer"], roi), target.key)


def write_jsonl(samples: Iterable[QASample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), ensure_ascii=False) + "\n")


class DataError(ValueError):
    """Malformed input data; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise DataError(f"invalid JSON ({exc})", lineno) from None
            if not isinstance(obj, dict):
                raise DataError("record is not a JSON object", lineno)
            yield lineno, obj


def read_jsonl(path) -> list[QASample]:
    out = []
    for lineno, obj in iter_jsonl(Path(path)):
        try:
            out.append(sample_from_record(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad dataset record ({exc})", lineno) from None
    return out
