from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from schemaparse.text import match_key, normalize_text, normalize_utterance, spell_number, word_spans


def test_numerals_are_spelled_out():
    assert normalize_utterance("2 large cokes") == ["two large cokes"]
    assert normalize_utterance("I want 21 wings, 100 fries") == ["i want twenty-one wings one hundred fries"]
    assert normalize_utterance("order 250 napkins") == ["order 250 napkins"]


def test_sentences_split_and_symbols_drop():
    assert normalize_utterance("One pizza. A coke? Thanks") == ["one pizza", "a coke", "thanks"]
    assert normalize_utterance("jalapeño   pizza") == ["jalapeo pizza"]
    assert normalize_utterance(" . ") == []


@pytest.mark.parametrize("n, word", [(0, "zero"), (7, "seven"), (13, "thirteen"), (40, "forty"), (99, "ninety-nine")])
def test_spell_number(n, word):
    assert spell_number(n) == word


def test_spell_number_range():
    with pytest.raises(ValueError):
        spell_number(101)


def test_word_spans_and_match_key():
    assert word_spans("Large-size pie") == [("large", 0, 5), ("size", 6, 10), ("pie", 11, 14)]
    assert match_key("Dr. Pepper") == "dr pepper"


@given(st.text(max_size=60))
def test_normalization_is_idempotent(text):
    for piece in normalize_utterance(text):
        assert normalize_utterance(piece) == [piece]
        assert piece == normalize_text(piece)
