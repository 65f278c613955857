"""Text normalization shared by catalog lookup, linking and data generation."""

from __future__ import annotations

import re

_WS = re.compile(r"\s+")
_WORD = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*")
_DIGITS = re.compile(r"\b\d+\b")
_SENTENCE_END = re.compile(r"[.?]+(?:\s+|$)")

_ONES = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen",
    "seventeen", "eighteen", "nineteen",
]
_TENS = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"]


def normalize_text(text: str) -> str:
    """Lower-case and collapse runs of whitespace."""
    return _WS.sub(" ", text.strip().lower())


def spell_number(n: int) -> str:
    """Spell out an integer in 0..100 ("21" -> "twenty-one")."""
    if not 0 <= n <= 100:
        raise ValueError(f"can only spell numbers in 0..100, got {n}")
    if n == 100:
        return "one hundred"
    if n < 20:
        return _ONES[n]
    tens, ones = divmod(n, 10)
    return _TENS[tens] if ones == 0 else f"{_TENS[tens]}-{_ONES[ones]}"


def _spell_match(m: re.Match[str]) -> str:
    n = int(m.group(0))
    return spell_number(n) if n <= 100 else m.group(0)


def normalize_utterance(text: str) -> list[str]:
    """Apply the crowd-sourced utterance clean-up rules.

    Splits on sentence-final periods and question marks, drops commas and
    non-ASCII characters (without splitting), spells out numerals up to 100
    and lower-cases. Returns one string per resulting utterance.
    """
    text = text.encode("ascii", "ignore").decode("ascii").replace(",", "")
    out = []
    for piece in _SENTENCE_END.split(text):
        piece = _DIGITS.sub(_spell_match, piece)
        piece = normalize_text(piece)
        if piece:
            out.append(piece)
    return out


def word_spans(text: str) -> list[tuple[str, int, int]]:
    """Word tokens of ``text`` with character offsets.

    Hyphens and other punctuation separate words, so "large-size" yields
    "large" and "size".
    """
    return [(m.group(0), m.start(), m.end()) for m in _WORD.finditer(text.lower())]


def match_key(text: str) -> str:
    """Canonical form used to compare surfaces during fuzzy matching."""
    return " ".join(w for w, _, _ in word_spans(text))
