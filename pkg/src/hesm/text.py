"""Tokenization, n-gram extraction and sentence splitting."""

from __future__ import annotations

import re
from collections import Counter
from typing import Sequence

_NON_ALNUM = re.compile(r"[^0-9a-z]+")
_SENTENCE_BREAK = re.compile(r"[.!?\n]")

Ngram = tuple[str, ...]


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it on every run of non-alphanumeric characters.

    Only ASCII letters and digits survive; there is no stemming and no stop-word
    removal.

    >>> tokenize("Acute CHF, exacerbation.")
    ['acute', 'chf', 'exacerbation']
    """
    return [tok for tok in _NON_ALNUM.split(text.lower()) if tok]


def ngrams(seq: Sequence[str], n: int) -> Counter[Ngram]:
    """Multiset of the contiguous ``n``-grams of ``seq``."""
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def split_sentences(text: str) -> list[str]:
    # Clinical notes are line oriented, so newlines end sentences too.
    parts = (part.strip() for part in _SENTENCE_BREAK.split(text))
    return [part for part in parts if part]
