"""Self-pretraining objectives compiled into (input, target) token sequences.

Three masking objectives operate on OCR tokens with normalized boxes:

* ``TM``  (text modeling): masked words are replaced by a sentinel plus four
  location tokens; the target spells the words.
* ``LM``  (layout modeling): masked words are wrapped in layout sentinels; the
  target gives their four location tokens.
* ``TLM`` (text-layout modeling): masked words become a single sentinel; the
  target gives word and location tokens.

Sentinels carry the zero box in ``input_boxes``. Sentinel counters restart at 0
for every pair.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import DomainError, StructuralError

Box = tuple[float, float, float, float]
ZERO_BOX: Box = (0.0, 0.0, 0.0, 0.0)

OBJECTIVES = ("TM", "LM", "TLM")
# (p_m, L_M) per objective
DEFAULT_MASKING = {"TM": (0.5, 100), "LM": (0.75, 100), "TLM": (0.15, 100)}
DEFAULT_VOCAB = 500

_SENTINEL_RE = re.compile(r"^<(/?)(text_layout|text|layout|loc)_(\d+)>$")


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at token {position})")
        self.position = position


def text_token(l: int) -> str:
    return f"<text_{l}>"


def layout_open(l: int) -> str:
    return f"<layout_{l}>"


def layout_close(l: int) -> str:
    return f"</layout_{l}>"


def text_layout_token(l: int) -> str:
    return f"<text_layout_{l}>"


def loc_token(b: int) -> str:
    return f"<loc_{b}>"


def is_sentinel(token: str) -> bool:
    return _SENTINEL_RE.match(token) is not None


@dataclass(frozen=True)
class DocumentExample:
    tokens: tuple[str, ...]
    boxes: tuple[Box, ...]
    image_ref: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "boxes", tuple(tuple(float(c) for c in b) for b in self.boxes))
        if len(self.tokens) != len(self.boxes):
            raise StructuralError(f"{len(self.tokens)} tokens but {len(self.boxes)} boxes")
        for i, box in enumerate(self.boxes):
            if len(box) != 4:
                raise StructuralError(f"box {i} has {len(box)} coordinates")
            x0, y0, x1, y1 = box
            if not all(0.0 <= c <= 1.0 for c in box):
                raise DomainError(f"box {i} has coordinates outside [0, 1]: {box}")
            if x0 > x1 or y0 > y1:
                raise DomainError(f"box {i} is inverted: {box}")
        for i, tok in enumerate(self.tokens):
            if not tok or any(ch.isspace() for ch in tok):
                raise DomainError(f"token {i} is empty or contains whitespace: {tok!r}")
            if is_sentinel(tok):
                raise DomainError(f"token {i} collides with the sentinel vocabulary: {tok!r}")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Discretizer:
    vocab_size: int = DEFAULT_VOCAB

    def __post_init__(self):
        if self.vocab_size < 1:
            raise DomainError("vocab_size must be >= 1")

    def __call__(self, c: float) -> int:
        return discretize(c, self.vocab_size)

    def center(self, b: int) -> float:
        return (b + 0.5) / self.vocab_size

    def loc_tokens(self, box: Box) -> list[str]:
        return [loc_token(self(c)) for c in box]


def discretize(c: float, vocab_size: int = DEFAULT_VOCAB) -> int:
    if not 0.0 <= c <= 1.0:
        raise DomainError(f"coordinate {c} outside [0, 1]")
    return min(int(np.floor(c * vocab_size)), vocab_size - 1)


@dataclass(frozen=True)
class MaskPlan:
    objective: str
    indices: tuple[int, ...]
    p_m: float
    max_masked: int
    # selections before truncation, kept for mask-rate statistics
    n_sampled: int = -1

    @property
    def l_m(self) -> int:
        return len(self.indices)

    def validate(self, n_tokens: int) -> None:
        if self.objective not in OBJECTIVES:
            raise StructuralError(f"unknown objective {self.objective!r}")
        if len(self.indices) > self.max_masked:
            raise StructuralError(f"{len(self.indices)} masked indices exceed cap {self.max_masked}")
        if list(self.indices) != sorted(set(self.indices)):
            raise StructuralError("masked indices must be strictly increasing")
        if self.indices and not (0 <= self.indices[0] and self.indices[-1] < n_tokens):
            raise StructuralError(f"masked index out of range for {n_tokens} tokens")


def sample_mask(
    n_tokens: int,
    p_m: float,
    max_masked: int,
    rng: np.random.Generator,
    objective: str = "TM",
) -> MaskPlan:
    """Include each token index independently with probability ``p_m``; keep
    the earliest ``max_masked`` when more are drawn."""
    if n_tokens < 1:
        raise DomainError("document has no tokens")
    if not 0.0 <= p_m <= 1.0:
        raise DomainError(f"p_m={p_m} outside [0, 1]")
    hits = np.flatnonzero(rng.random(n_tokens) < p_m)
    return MaskPlan(
        objective=objective,
        indices=tuple(int(i) for i in hits[:max_masked]),
        p_m=p_m,
        max_masked=max_masked,
        n_sampled=len(hits),
    )


@dataclass(frozen=True)
class SequencePair:
    input: tuple[str, ...]
    target: tuple[str, ...]
    input_boxes: tuple[Box, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "input", tuple(self.input))
        object.__setattr__(self, "target", tuple(self.target))
        object.__setattr__(self, "input_boxes", tuple(self.input_boxes))
        if len(self.input_boxes) != len(self.input):
            raise StructuralError("input_boxes must align with input tokens")

    def to_line(self) -> str:
        return " ".join(self.input) + "\t" + " ".join(self.target)


def _check(example: DocumentExample, plan: MaskPlan, objective: str) -> set[int]:
    if plan.objective != objective:
        raise StructuralError(f"plan is for {plan.objective}, not {objective}")
    plan.validate(len(example))
    return set(plan.indices)


def build_tm(example: DocumentExample, plan: MaskPlan, discretizer: Discretizer) -> SequencePair:
    masked = _check(example, plan, "TM")
    inp, boxes, tgt = [], [], []
    l = 0
    for i, (tok, box) in enumerate(zip(example.tokens, example.boxes)):
        if i in masked:
            group = [text_token(l)] + discretizer.loc_tokens(box)
            inp += group
            boxes += [ZERO_BOX] * len(group)
            tgt += [text_token(l), tok]
            l += 1
        else:
            inp.append(tok)
            boxes.append(box)
    return SequencePair(inp, tgt, boxes)


def build_lm(example: DocumentExample, plan: MaskPlan, discretizer: Discretizer) -> SequencePair:
    masked = _check(example, plan, "LM")
    inp, boxes, tgt = [], [], []
    l = 0
    for i, (tok, box) in enumerate(zip(example.tokens, example.boxes)):
        if i in masked:
            inp += [layout_open(l), tok, layout_close(l)]
            boxes += [ZERO_BOX, box, ZERO_BOX]
            tgt += [layout_open(l)] + discretizer.loc_tokens(box)
            l += 1
        else:
            inp.append(tok)
            boxes.append(box)
    return SequencePair(inp, tgt, boxes)


def build_tlm(example: DocumentExample, plan: MaskPlan, discretizer: Discretizer) -> SequencePair:
    masked = _check(example, plan, "TLM")
    inp, boxes, tgt = [], [], []
    l = 0
    for i, (tok, box) in enumerate(zip(example.tokens, example.boxes)):
        if i in masked:
            inp.append(text_layout_token(l))
            boxes.append(ZERO_BOX)
            tgt += [text_layout_token(l), tok] + discretizer.loc_tokens(box)
            l += 1
        else:
            inp.append(tok)
            boxes.append(box)
    return SequencePair(inp, tgt, boxes)


BUILDERS = {"TM": build_tm, "LM": build_lm, "TLM": build_tlm}


def build_pair(example: DocumentExample, plan: MaskPlan, discretizer: Discretizer) -> SequencePair:
    return BUILDERS[plan.objective](example, plan, discretizer)


def compile_example(
    example: DocumentExample,
    objective: str,
    rng: np.random.Generator,
    discretizer: Discretizer | None = None,
    masking: dict | None = None,
) -> SequencePair:
    p_m, max_masked = (masking or DEFAULT_MASKING)[objective]
    plan = sample_mask(len(example), p_m, max_masked, rng, objective)
    return build_pair(example, plan, discretizer or Discretizer())


# --- inverse -------------------------------------------------------------


class _Reader:
    def __init__(self, tokens: Sequence[str], offset: int = 0):
        self.tokens = tokens
        self.pos = 0
        self.offset = offset

    def done(self) -> bool:
        return self.pos >= len(self.tokens)

    def peek(self) -> str | None:
        return None if self.done() else self.tokens[self.pos]

    def take(self) -> str:
        if self.done():
            raise ParseError("unexpected end of sequence", self.offset + self.pos)
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_sentinel(self, kind: str, l: int, closing: bool = False) -> None:
        tok = self.take()
        m = _SENTINEL_RE.match(tok)
        if m is None or m.group(2) != kind or bool(m.group(1)) != closing or int(m.group(3)) != l:
            want = f"<{'/' if closing else ''}{kind}_{l}>"
            raise ParseError(f"expected {want}, found {tok!r}", self.offset + self.pos - 1)

    def word(self) -> str:
        tok = self.take()
        if is_sentinel(tok):
            raise ParseError(f"expected a word, found sentinel {tok!r}", self.offset + self.pos - 1)
        return tok

    def loc_quad(self, discretizer: Discretizer) -> Box:
        coords = []
        for _ in range(4):
            tok = self.take()
            m = _SENTINEL_RE.match(tok)
            if m is None or m.group(2) != "loc" or m.group(1):
                raise ParseError(f"expected a location token, found {tok!r}", self.offset + self.pos - 1)
            b = int(m.group(3))
            if b >= discretizer.vocab_size:
                raise ParseError(f"location bin {b} outside vocabulary", self.offset + self.pos - 1)
            coords.append(discretizer.center(b))
        return tuple(coords)


def sentinel_kind(tok: str) -> tuple[str, bool, int] | None:
    m = _SENTINEL_RE.match(tok)
    if m is None:
        return None
    return m.group(2), bool(m.group(1)), int(m.group(3))


def reconstruct(pair: SequencePair, objective: str, discretizer: Discretizer | None = None) -> DocumentExample:
    """Invert a compiled pair back to a document.

    Masked boxes come back as discretization bin centers; unmasked boxes are
    taken from ``input_boxes`` unchanged.
    """
    disc = discretizer or Discretizer()
    if objective not in OBJECTIVES:
        raise StructuralError(f"unknown objective {objective!r}")
    inp = _Reader(pair.input)
    # target positions are reported after the input tokens
    tgt = _Reader(pair.target, offset=len(pair.input))
    tokens: list[str] = []
    boxes: list[Box] = []
    l = 0
    while not inp.done():
        tok = inp.peek()
        kind = sentinel_kind(tok)
        if kind is None:
            tokens.append(inp.take())
            boxes.append(pair.input_boxes[inp.pos - 1])
            continue
        if objective == "TM":
            inp.expect_sentinel("text", l)
            box = inp.loc_quad(disc)
            tgt.expect_sentinel("text", l)
            tokens.append(tgt.word())
            boxes.append(box)
        elif objective == "LM":
            inp.expect_sentinel("layout", l)
            tokens.append(inp.word())
            inp.expect_sentinel("layout", l, closing=True)
            tgt.expect_sentinel("layout", l)
            boxes.append(tgt.loc_quad(disc))
        else:
            inp.expect_sentinel("text_layout", l)
            tgt.expect_sentinel("text_layout", l)
            tokens.append(tgt.word())
            boxes.append(tgt.loc_quad(disc))
        l += 1
    if not tgt.done():
        raise ParseError(f"unconsumed target token {tgt.peek()!r}", tgt.offset + tgt.pos)
    return DocumentExample(tuple(tokens), tuple(boxes))


# --- batch compile I/O ---------------------------------------------------


def read_documents(lines: Iterable[str]) -> Iterator[tuple[str, DocumentExample]]:
    """Parse JSON-lines records ``{"doc_id", "tokens", "boxes"[, "image_ref"]}``."""
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            doc = DocumentExample(tuple(rec["tokens"]), tuple(tuple(b) for b in rec["boxes"]), rec.get("image_ref"))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DomainError(f"line {lineno}: malformed document record ({exc})") from exc
        yield str(rec.get("doc_id", lineno - 1)), doc


def document_record(doc_id: str, doc: DocumentExample) -> str:
    return json.dumps({"doc_id": doc_id, "tokens": list(doc.tokens), "boxes": [list(b) for b in doc.boxes]})


def compile_corpus(
    documents: Iterable[tuple[str, DocumentExample]],
    objectives: Sequence[str],
    seed: int,
    discretizer: Discretizer | None = None,
) -> Iterator[SequencePair]:
    """One pair per (document, objective), each with its own seeded mask draw."""
    disc = discretizer or Discretizer()
    for n, (_, doc) in enumerate(documents):
        for obj in objectives:
            rng = np.random.default_rng([seed, n, OBJECTIVES.index(obj)])
            yield compile_example(doc, obj, rng, disc)
