from __future__ import annotations

import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dci.label_space import LabelSet
from dci.prompting import (
    DEFAULT_TEMPLATE,
    Invalid,
    Match,
    NoneAnswer,
    ParsePolicy,
    PromptTemplate,
    build_prompt,
    outcome_from_dict,
    outcome_to_dict,
    parse_response,
)

STRICT = ParsePolicy("strict", 0)
NORMALIZED = ParsePolicy("normalized", 0)


def count_word(text: str, word: str) -> int:
    return len(re.findall(rf"(?<!\w){re.escape(word)}(?!\w)", text))


class TestBuildPrompt:
    def test_each_piece_exactly_once(self):
        prompt = build_prompt(DEFAULT_TEMPLATE, LabelSet(("cat", "dog")))
        assert prompt.count("cat") == 1
        assert prompt.count("dog") == 1
        assert prompt.count("None") == 1
        assert prompt.count(DEFAULT_TEMPLATE.one_shot_exemplar) == 1

    def test_section_order(self):
        t = DEFAULT_TEMPLATE
        prompt = build_prompt(t, LabelSet(("cat", "dog")))
        positions = [prompt.index(x) for x in (
            t.rules_preamble, "1. cat\n2. dog", t.none_instruction,
            t.anti_laziness_clause, t.format_constraints, t.one_shot_exemplar)]
        assert positions == sorted(positions)

    def test_deterministic(self):
        group = LabelSet(("Siamese cat", "golden retriever"))
        assert build_prompt(DEFAULT_TEMPLATE, group) == build_prompt(DEFAULT_TEMPLATE, group)

    def test_hundred_labels_no_truncation(self):
        group = LabelSet(tuple(f"Species {i}" for i in range(100)))
        prompt = build_prompt(DEFAULT_TEMPLATE, group)
        for i, label in enumerate(group, start=1):
            assert f"{i}. {label}\n" in prompt + "\n"

    def test_casing_preserved(self):
        prompt = build_prompt(DEFAULT_TEMPLATE, LabelSet(("Great White Shark", "iPod")))
        assert "Great White Shark" in prompt and "iPod" in prompt

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            build_prompt(DEFAULT_TEMPLATE, LabelSet())

    def test_template_file_slots(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("Pick one:\n{CANDIDATES}\nor None.\n{EXEMPLAR}\n")
        t = PromptTemplate.from_file(path)
        prompt = build_prompt(t, LabelSet(("a", "b")))
        assert prompt.startswith("Pick one:\n1. a\n2. b\nor None.")
        assert t.one_shot_exemplar in prompt

    def test_template_file_without_slot(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("no slots here")
        with pytest.raises(ValueError):
            PromptTemplate.from_file(path)


@given(st.lists(st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=3, max_size=12),
                min_size=1, max_size=30, unique=True))
def test_every_candidate_listed_once(words):
    group = LabelSet(tuple(f"zq{w}" for w in words))
    prompt = build_prompt(DEFAULT_TEMPLATE, group)
    for label in group:
        assert count_word(prompt, label) == 1
    assert prompt.count("None") == 1


class TestParse:
    group = LabelSet(("tabby cat", "Persian cat", "dog"))

    def test_exact_match(self):
        assert parse_response("tabby cat", self.group, STRICT) == Match("tabby cat")
        assert parse_response("  dog\n", self.group, STRICT) == Match("dog")

    @pytest.mark.parametrize("raw", ["None", "none", " NONE "])
    def test_none(self, raw):
        assert parse_response(raw, self.group, STRICT) == NoneAnswer()

    def test_extra_tokens_invalid_in_both_modes(self):
        raw = "It's a Tabby Cat!"
        assert parse_response(raw, self.group, STRICT) == Invalid(raw)
        assert parse_response(raw, self.group, NORMALIZED) == Invalid(raw)

    def test_strict_is_case_sensitive(self):
        assert isinstance(parse_response("Tabby Cat", self.group, STRICT), Invalid)

    def test_normalized_relaxes_case_space_punct(self):
        assert parse_response("Tabby   Cat.", self.group, NORMALIZED) == Match("tabby cat")
        assert parse_response("persian cat!", self.group, NORMALIZED) == Match("Persian cat")
        assert parse_response("None.", self.group, NORMALIZED) == NoneAnswer()

    def test_normalized_ambiguity_invalid(self):
        group = LabelSet(("Apple", "apple."))
        assert isinstance(parse_response("APPLE", group, NORMALIZED), Invalid)

    def test_outside_group_is_invalid(self):
        assert isinstance(parse_response("horse", self.group, NORMALIZED), Invalid)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            ParsePolicy("fuzzy", 1)
        with pytest.raises(ValueError):
            ParsePolicy("strict", 11)

    def test_outcome_dict_roundtrip(self):
        for o in (Match("x"), NoneAnswer(), Invalid("??")):
            assert outcome_from_dict(outcome_to_dict(o)) == o


label_text = st.text(min_size=1, max_size=20).filter(lambda s: s.strip())


@given(st.lists(label_text, min_size=1, max_size=12, unique_by=str.strip),
       st.text(max_size=30), st.sampled_from([STRICT, NORMALIZED]))
def test_match_always_inside_group(raw_labels, raw, policy):
    group = LabelSet(tuple(raw_labels))
    out = parse_response(raw, group, policy)
    if isinstance(out, Match):
        assert out.label in group
    assert parse_response(raw, group, policy) == out


@given(st.lists(label_text, min_size=1, max_size=12, unique_by=str.strip))
def test_strict_roundtrip(raw_labels):
    group = LabelSet(tuple(raw_labels))
    for label in group:
        assert parse_response(label, group, STRICT) == Match(label)
