"""ROUGE-N and ROUGE-L scoring written from first principles.

Scores are computed on :func:`hesm.text.tokenize` output. ROUGE-L uses the
longest common subsequence of the whole token sequences (no sentence-level
union), and the F-measure is the balanced F1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from hesm.text import ngrams, tokenize


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_ratios(cls, precision: float, recall: float) -> "RougeScore":
        if precision + recall == 0:
            return cls(precision, recall, 0.0)
        return cls(precision, recall, 2 * precision * recall / (precision + recall))

    def field(self, name: str) -> float:
        if name not in ("precision", "recall", "f1"):
            raise ValueError(f"unknown score field {name!r}")
        return getattr(self, name)


ZERO = RougeScore(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RougeVariant:
    """``kind`` is ``"N"`` (with ``order``) or ``"L"``."""

    kind: str
    order: int = 0

    def __post_init__(self):
        if self.kind == "N":
            if self.order < 1:
                raise ValueError(f"ROUGE-N order must be >= 1, got {self.order}")
        elif self.kind == "L":
            object.__setattr__(self, "order", 0)
        else:
            raise ValueError(f"unknown ROUGE variant kind {self.kind!r}")

    @classmethod
    def parse(cls, name: str) -> "RougeVariant":
        """Accepts ``L``, ``RL``, ``rouge-l``, ``1``, ``R2``, ``rouge-2`` and so on."""
        key = name.strip().upper().replace("ROUGE", "").strip("-_ ")
        if key.startswith("R") and len(key) > 1:
            key = key[1:]
        if key == "L":
            return cls("L")
        if key.isdigit():
            return cls("N", int(key))
        raise ValueError(f"cannot parse ROUGE variant {name!r}")

    @property
    def name(self) -> str:
        return "RL" if self.kind == "L" else f"R{self.order}"

    def __str__(self) -> str:
        return self.name


ROUGE_1 = RougeVariant("N", 1)
ROUGE_2 = RougeVariant("N", 2)
ROUGE_L = RougeVariant("L")
STANDARD_VARIANTS = (ROUGE_1, ROUGE_2, ROUGE_L)


def _ratio(num: float, den: int) -> float:
    return num / den if den else 0.0


def rouge_n(hyp: Sequence[str], ref: Sequence[str], n: int) -> RougeScore:
    hyp_grams = ngrams(hyp, n)
    ref_grams = ngrams(ref, n)
    overlap = sum((hyp_grams & ref_grams).values())
    return RougeScore.from_ratios(
        _ratio(overlap, sum(hyp_grams.values())),
        _ratio(overlap, sum(ref_grams.values())),
    )


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Length of the longest common subsequence of ``a`` and ``b``.

    Bit-parallel form of the standard LCS dynamic program (Hyyrö 2004): one
    column of the DP table is packed into an integer with one bit per
    position of ``a``, so each element of ``b`` costs a handful of big-int
    operations instead of ``len(a)`` cell updates.
    """
    if not a or not b:
        return 0
    match: dict = {}
    for i, tok in enumerate(a):
        match[tok] = match.get(tok, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for tok in b:
        m = match.get(tok)
        if m is None:
            continue
        u = v & m
        v = ((v + u) | (v - u)) & full
    return len(a) - v.bit_count()


def rouge_l(hyp: Sequence[str], ref: Sequence[str]) -> RougeScore:
    lcs = lcs_length(hyp, ref)
    return RougeScore.from_ratios(_ratio(lcs, len(hyp)), _ratio(lcs, len(ref)))


def score_tokens(hyp: Sequence[str], ref: Sequence[str], variant: RougeVariant) -> RougeScore:
    if variant.kind == "L":
        return rouge_l(hyp, ref)
    return rouge_n(hyp, ref, variant.order)


def match_counts(hyp: Sequence[str], ref: Sequence[str], variant: RougeVariant) -> tuple[int, int, int]:
    """Integer (matches, hypothesis units, reference units) behind a score.

    Precision is ``matches / hyp_units`` and recall ``matches / ref_units``,
    so callers needing exact arithmetic can rebuild every field as a rational.
    """
    if variant.kind == "L":
        return lcs_length(hyp, ref), len(hyp), len(ref)
    hyp_grams, ref_grams = ngrams(hyp, variant.order), ngrams(ref, variant.order)
    return sum((hyp_grams & ref_grams).values()), sum(hyp_grams.values()), sum(ref_grams.values())


def score(hyp: str, ref: str, variant: RougeVariant) -> RougeScore:
    return score_tokens(tokenize(hyp), tokenize(ref), variant)


def score_all(hyp: str, ref: str) -> dict[str, RougeScore]:
    """R1, R2 and RL for one pair, keyed by variant name."""
    hyp_toks, ref_toks = tokenize(hyp), tokenize(ref)
    return {v.name: score_tokens(hyp_toks, ref_toks, v) for v in STANDARD_VARIANTS}
