"""Extractive upper-bound baselines built from reference overlap."""

from __future__ import annotations

from collections import Counter
from typing import Sequence

from hesm.rouge import RougeScore
from hesm.text import split_sentences, tokenize


def sentence_pool(assessment: str, subjective: str, objective: str) -> list[str]:
    """Input sentences ordered by section: assessment, subjective, objective."""
    return split_sentences(assessment) + split_sentences(subjective) + split_sentences(objective)


def _unigram_score(hyp: Counter, hyp_len: int, ref: Counter, ref_len: int) -> RougeScore:
    overlap = sum((hyp & ref).values())
    return RougeScore.from_ratios(overlap / hyp_len if hyp_len else 0.0,
                                  overlap / ref_len if ref_len else 0.0)


def all_overlap(pool: Sequence[str], reference: str) -> str:
    """Every sentence with positive ROUGE-1 recall against ``reference``, in pool order."""
    ref = set(tokenize(reference))
    return " ".join(s for s in pool if ref.intersection(tokenize(s)))


def greedy_best(pool: Sequence[str], reference: str) -> str:
    """Add sentences one at a time, each time the one giving the highest ROUGE-1 F1
    of the running summary; stop when no addition strictly improves F1."""
    return " ".join(pool[i] for i in greedy_best_indices(pool, reference))


def greedy_best_indices(pool: Sequence[str], reference: str) -> list[int]:
    ref_toks = tokenize(reference)
    ref = Counter(ref_toks)
    sent_counts = [Counter(tokenize(s)) for s in pool]
    chosen: list[int] = []
    summary: Counter = Counter()
    best_f1 = 0.0
    while True:
        best_i, best_gain = None, best_f1
        for i, counts in enumerate(sent_counts):
            if i in chosen:
                continue
            cand = summary + counts
            f1 = _unigram_score(cand, sum(cand.values()), ref, len(ref_toks)).f1
            if f1 > best_gain:
                best_i, best_gain = i, f1
        if best_i is None:
            return chosen
        chosen.append(best_i)
        summary += sent_counts[best_i]
        best_f1 = best_gain
