"""Normalization and semantic matching of free-text Inspector answers.

The Inspector replies in free text; these pure functions turn a reply into a
typed value and decide whether it matches the gold answer, with inclusive
absolute tolerance for numbers.  Unparseable replies are failed verdicts
upstream, never crashes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

from .errors import TypeMismatch, UnparseableAnswer
from .model import AnswerType, QAItem

AFFIRMATIVE = frozenset({"yes", "true", "correct"})
NEGATIVE = frozenset({"no", "false", "incorrect"})

_WORD_RE = re.compile(r"[a-z]+")
# Currency symbols are stripped before number extraction; "%" is dropped
# without rescaling (a reply of "53%" answers a percentage question with 53).
_CURRENCY_RE = re.compile(r"[$€£¥]")
_THOUSANDS_RE = re.compile(r"(?<=\d),(?=\d{3}(?:\D|$))")
_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


class AnswerKind(str, Enum):
    BOOL = "bool"
    NUMBER = "number"
    TEXT = "text"


_KIND_FOR_TYPE = {
    AnswerType.BOOL: AnswerKind.BOOL,
    AnswerType.FLOAT: AnswerKind.NUMBER,
    AnswerType.STRING: AnswerKind.TEXT,
}


@dataclass(frozen=True)
class NormalizedAnswer:
    """A parsed answer with exactly one populated value."""

    kind: AnswerKind
    bool_value: bool | None = None
    number_value: float | None = None
    text_value: str | None = None

    def __post_init__(self) -> None:
        populated = [
            v for v in (self.bool_value, self.number_value, self.text_value) if v is not None
        ]
        if len(populated) != 1:
            raise ValueError("exactly one value must be populated")
        if self.number_value is not None and not math.isfinite(self.number_value):
            raise ValueError("number_value must be finite")

    @classmethod
    def from_bool(cls, value: bool) -> "NormalizedAnswer":
        return cls(kind=AnswerKind.BOOL, bool_value=value)

    @classmethod
    def from_number(cls, value: float) -> "NormalizedAnswer":
        return cls(kind=AnswerKind.NUMBER, number_value=float(value))

    @classmethod
    def from_text(cls, value: str) -> "NormalizedAnswer":
        return cls(kind=AnswerKind.TEXT, text_value=value)

    def render(self) -> str:
        """Canonical textual form; normalize_answer is idempotent over it."""
        if self.kind is AnswerKind.BOOL:
            return "yes" if self.bool_value else "no"
        if self.kind is AnswerKind.NUMBER:
            return repr(self.number_value)
        return self.text_value or ""


def collapse_text(text: str) -> str:
    """Lowercase and collapse runs of whitespace to single spaces."""
    return " ".join(text.lower().split())


def normalize_answer(raw: str, expected_type: AnswerType) -> NormalizedAnswer:
    """Parse a free-text reply into the expected answer type.

    bool: the first word from the affirmative lexicon {yes,true,correct} or
    the negative lexicon {no,false,incorrect} decides, case-insensitively.
    float: the first decimal or scientific-notation number, after stripping
    thousands separators, percent signs and currency symbols (first-number
    extraction keeps the parser blind to the gold answer).
    string: whitespace-collapsed lowercase text.

    Raises:
        UnparseableAnswer: bool reply containing neither lexicon, or float
            reply containing no number token.
    """
    expected_type = AnswerType(expected_type)
    text = raw.strip()

    if expected_type is AnswerType.BOOL:
        for word in _WORD_RE.findall(text.lower()):
            if word in AFFIRMATIVE:
                return NormalizedAnswer.from_bool(True)
            if word in NEGATIVE:
                return NormalizedAnswer.from_bool(False)
        raise UnparseableAnswer(f"no affirmative/negative word in reply: {raw!r}")

    if expected_type is AnswerType.FLOAT:
        cleaned = _CURRENCY_RE.sub("", text)
        cleaned = _THOUSANDS_RE.sub("", cleaned)
        match = _NUMBER_RE.search(cleaned)
        if match is None:
            raise UnparseableAnswer(f"no number token in reply: {raw!r}")
        return NormalizedAnswer.from_number(float(match.group()))

    return NormalizedAnswer.from_text(collapse_text(text))


def match_answer(pred: NormalizedAnswer, gold: QAItem) -> bool:
    """Decide whether a normalized answer matches the gold answer.

    bool: equality; float: |pred - gold| <= tolerance (boundary counts as a
    match); string: equality after whitespace collapse and lowercasing.

    Raises:
        TypeMismatch: the normalized kind is incompatible with the gold
            answer type -- a pipeline bug, not a wrong answer.
    """
    expected_kind = _KIND_FOR_TYPE[gold.answer_type]
    if pred.kind is not expected_kind:
        raise TypeMismatch(
            f"normalized kind {pred.kind.value} incompatible with gold type "
            f"{gold.answer_type.value}"
        )

    if gold.answer_type is AnswerType.BOOL:
        return pred.bool_value == gold.gold_answer
    if gold.answer_type is AnswerType.FLOAT:
        return abs(pred.number_value - float(gold.gold_answer)) <= gold.tolerance
    return pred.text_value == collapse_text(str(gold.gold_answer))


def verdict_for(raw_reply: str, gold: QAItem) -> bool:
    """Normalize and match in one step; an unparseable reply is a fail."""
    try:
        pred = normalize_answer(raw_reply, gold.answer_type)
    except UnparseableAnswer:
        return False
    return match_answer(pred, gold)
