"""Minimum Bayes risk selection over a pool of candidate texts.

Every candidate is treated as an equally likely pseudo-reference; the
selected one maximizes the summed reward against the whole pool,
including itself. Ties go to the lowest index.

Consensus sums are accumulated as exact rationals from the integer ROUGE
counts, so candidates with equal true consensus tie exactly instead of
being separated by floating-point rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from hesm.rouge import ROUGE_L, RougeVariant, match_counts, rouge_l, rouge_n
from hesm.text import tokenize


@dataclass(frozen=True)
class Reward:
    """A ROUGE variant and the score field used as the reward."""

    variant: RougeVariant = ROUGE_L
    field: str = "f1"

    def __post_init__(self):
        if self.field not in ("precision", "recall", "f1"):
            raise ValueError(f"unknown reward field {self.field!r}")

    @classmethod
    def parse(cls, variant: str = "L", field: str = "f1") -> "Reward":
        aliases = {"p": "precision", "prec": "precision", "r": "recall", "rec": "recall", "f": "f1"}
        return cls(RougeVariant.parse(variant), aliases.get(field.lower(), field.lower()))

    def to_dict(self) -> dict:
        return {"variant": self.variant.name, "field": self.field}


DEFAULT_REWARD = Reward()


@dataclass
class CandidatePool:
    candidates: list[str]
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("candidate pool must not be empty")
        if not self.labels:
            self.labels = [f"cand-{i}" for i in range(len(self.candidates))]
        if len(self.labels) != len(self.candidates):
            raise ValueError("need one provenance label per candidate")

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass
class MbrResult:
    selected_index: int
    consensus_scores: list[float]
    reward_matrix: np.ndarray
    selected_text: str = ""

    def to_dict(self) -> dict:
        return {
            "selected_index": self.selected_index,
            "selected_text": self.selected_text,
            "consensus_scores": list(self.consensus_scores),
            "reward_matrix": self.reward_matrix.tolist(),
        }


def _pair_score(hyp, ref, variant: RougeVariant):
    if variant.kind == "L":
        return rouge_l(hyp, ref)
    return rouge_n(hyp, ref, variant.order)


def reward_matrix(pool: CandidatePool | Sequence[str], reward: Reward = DEFAULT_REWARD) -> np.ndarray:
    """``M[i, j] = reward(candidate i as hypothesis, candidate j as reference)``.

    Identical texts are scored once; otherwise every ordered pair is computed.
    """
    texts = pool.candidates if isinstance(pool, CandidatePool) else list(pool)
    toks = [tokenize(t) for t in texts]
    n = len(texts)
    matrix = np.empty((n, n))
    memo: dict[tuple[str, str], float] = {}
    keys = [" ".join(t) for t in toks]
    for i in range(n):
        for j in range(n):
            key = (keys[i], keys[j])
            value = memo.get(key)
            if value is None:
                value = _pair_score(toks[i], toks[j], reward.variant).field(reward.field)
                memo[key] = value
            matrix[i, j] = value
    return matrix


def _exact_reward(matches: int, hyp_units: int, ref_units: int, name: str) -> Fraction:
    if matches == 0:
        return Fraction(0)
    if name == "precision":
        return Fraction(matches, hyp_units)
    if name == "recall":
        return Fraction(matches, ref_units)
    # 2PR / (P + R) with P = m/h and R = m/r
    return Fraction(2 * matches, hyp_units + ref_units)


def consensus_exact(pool: CandidatePool | Sequence[str], reward: Reward = DEFAULT_REWARD) -> list[Fraction]:
    """Exact summed reward of each candidate against the whole pool."""
    texts = pool.candidates if isinstance(pool, CandidatePool) else list(pool)
    toks = [tokenize(t) for t in texts]
    keys = [" ".join(t) for t in toks]
    memo: dict[tuple[str, str], Fraction] = {}
    sums = []
    for i in range(len(texts)):
        total = Fraction(0)
        for j in range(len(texts)):
            key = (keys[i], keys[j])
            value = memo.get(key)
            if value is None:
                value = _exact_reward(*match_counts(toks[i], toks[j], reward.variant), reward.field)
                memo[key] = value
            total += value
        sums.append(total)
    return sums


def mbr_select(pool: CandidatePool | Sequence[str], reward: Reward = DEFAULT_REWARD) -> MbrResult:
    if not isinstance(pool, CandidatePool):
        pool = CandidatePool(list(pool))
    matrix = reward_matrix(pool, reward)
    exact = consensus_exact(pool, reward)
    best = 0
    for i, s in enumerate(exact):
        if s > exact[best]:
            best = i
    return MbrResult(best, [float(s) for s in exact], matrix, pool.candidates[best])


def read_candidates(lines: Sequence[str]) -> CandidatePool:
    """Candidates from plain lines or JSON objects with ``text`` (and optional ``system``).

    Blank lines are skipped.
    """
    texts, labels = [], []
    for i, line in enumerate(lines):
        line = line.rstrip("\n")
        stripped = line.strip()
        if stripped.startswith("{"):
            obj = json.loads(stripped)
            if "text" not in obj:
                raise ValueError(f"line {i + 1}: JSON candidate lacks a 'text' field")
            texts.append(obj["text"])
            labels.append(str(obj.get("system", f"cand-{len(texts) - 1}")))
        elif stripped:
            texts.append(line)
            labels.append(f"cand-{len(texts) - 1}")
    return CandidatePool(texts, labels)
