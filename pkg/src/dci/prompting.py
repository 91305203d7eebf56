"""Conquer-phase prompt rendering and answer parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .label_space import LabelSet

NONE_TOKEN = "None"
TEMPLATE_VERSION = "1"

# Wording constraints: "None" appears once (in none_instruction) and no fixed
# text may contain common label words, so every candidate occurs exactly once.
DEFAULT_RULES = (
    "You are an image recognition assistant. Look at the image and decide "
    "which single entry from the list below names the main object it shows.\n"
    "Candidates:"
)
DEFAULT_NONE_INSTRUCTION = (
    f"If no entry in the list matches the object in the image, answer {NONE_TOKEN}."
)
DEFAULT_ANTI_LAZINESS = (
    "Do not give up too early: if one entry is plausibly what the image shows, "
    "choose the most probable entry rather than the absence answer."
)
DEFAULT_FORMAT = (
    "Output format: reply with exactly one entry copied verbatim from the list, "
    "keeping its casing and plural form, or the absence answer. "
    "No explanation, numbering, quotes or extra words."
)
DEFAULT_EXEMPLAR = (
    "Example. List: 1. sparrow 2. fire truck 3. tulip. "
    "Image: a red fire engine parked on a street. Reply: fire truck"
)


@dataclass(frozen=True)
class PromptTemplate:
    rules_preamble: str = DEFAULT_RULES
    none_instruction: str = DEFAULT_NONE_INSTRUCTION
    anti_laziness_clause: str = DEFAULT_ANTI_LAZINESS
    format_constraints: str = DEFAULT_FORMAT
    one_shot_exemplar: str = DEFAULT_EXEMPLAR
    # full-text override with {CANDIDATES} and {EXEMPLAR} slots
    body: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> PromptTemplate:
        """Load a template file using the ``{CANDIDATES}`` / ``{EXEMPLAR}`` slots."""
        text = Path(path).read_text(encoding="utf-8")
        if "{CANDIDATES}" not in text:
            raise ValueError(f"template {path} has no {{CANDIDATES}} slot")
        return cls(body=text)


DEFAULT_TEMPLATE = PromptTemplate()


def _numbered(group: LabelSet) -> str:
    return "\n".join(f"{i}. {label}" for i, label in enumerate(group, start=1))


def build_prompt(t: PromptTemplate, group: LabelSet) -> str:
    if len(group) == 0:
        raise ValueError("cannot build a prompt for an empty group")
    candidates = _numbered(group)
    if t.body is not None:
        return t.body.replace("{CANDIDATES}", candidates).replace(
            "{EXEMPLAR}", t.one_shot_exemplar
        )
    return "\n\n".join(
        [
            f"{t.rules_preamble}\n{candidates}",
            t.none_instruction,
            t.anti_laziness_clause,
            t.format_constraints,
            t.one_shot_exemplar,
        ]
    )


@dataclass(frozen=True)
class Match:
    label: str


@dataclass(frozen=True)
class NoneAnswer:
    pass


@dataclass(frozen=True)
class Invalid:
    raw_text: str


InferenceOutcome = Union[Match, NoneAnswer, Invalid]

PARSE_MODES = ("strict", "normalized")


@dataclass(frozen=True)
class ParsePolicy:
    mode: str = "normalized"
    max_retries: int = 2

    def __post_init__(self) -> None:
        if self.mode not in PARSE_MODES:
            raise ValueError(f"parse mode must be one of {PARSE_MODES}")
        if not 0 <= self.max_retries <= 10:
            raise ValueError("max_retries must be in [0, 10]")


_WS = re.compile(r"\s+")
_TRAILING_PUNCT = re.compile(r"[\s.,;:!?'\"`)\]]+$")


def normalize_answer(text: str) -> str:
    text = _WS.sub(" ", text.strip().lower())
    return _TRAILING_PUNCT.sub("", text)


def parse_response(raw: str, group: LabelSet, policy: ParsePolicy) -> InferenceOutcome:
    text = raw.strip()
    if text in group:
        return Match(text)
    if text.lower() == "none":
        return NoneAnswer()
    if policy.mode == "strict":
        return Invalid(raw)

    norm = normalize_answer(text)
    hits = [label for label in group if normalize_answer(label) == norm]
    if len(hits) == 1:
        return Match(hits[0])
    if not hits and norm == "none":
        return NoneAnswer()
    return Invalid(raw)


def outcome_to_dict(o: InferenceOutcome) -> dict:
    if isinstance(o, Match):
        return {"kind": "match", "label": o.label}
    if isinstance(o, NoneAnswer):
        return {"kind": "none"}
    return {"kind": "invalid", "raw": o.raw_text}


def outcome_from_dict(d: dict) -> InferenceOutcome:
    kind = d["kind"]
    if kind == "match":
        return Match(d["label"])
    if kind == "none":
        return NoneAnswer()
    if kind == "invalid":
        return Invalid(d["raw"])
    raise ValueError(f"unknown outcome kind {kind!r}")
