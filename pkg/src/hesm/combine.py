"""Token-level ensembles and parameter averaging of compatible models."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from hesm.model import CopyMixModel, SequenceModel, VocabMismatchError


def pairwise_sum(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Sum in a fixed balanced tree over index order: ``(v0 + v1) + (v2 + v3)``."""
    if len(vectors) == 1:
        return np.array(vectors[0], dtype=np.float64)
    mid = (len(vectors) + 1) // 2
    return pairwise_sum(vectors[:mid]) + pairwise_sum(vectors[mid:])


class TokenEnsembleModel(SequenceModel):
    """Averages member next-token probabilities with uniform weights.

    Averaging happens in probability space. The ensemble is itself a
    :class:`SequenceModel`, so it can be decoded or nested like any member.
    """

    def __init__(self, members: Sequence[SequenceModel]):
        if not members:
            raise ValueError("a token ensemble needs at least one member")
        vocab = members[0].vocab
        for i, m in enumerate(members[1:], start=1):
            if m.vocab != vocab:
                raise VocabMismatchError(f"member {i} does not share the vocabulary of member 0")
        self.members = list(members)
        self.vocab = vocab
        windows = [m.context_window for m in self.members]
        self.context_window = None if None in windows else max(windows)

    def next_distribution(self, x, prefix):
        if len(self.members) == 1:
            return self.members[0].next_distribution(x, prefix)
        dists = [m.next_distribution(x, prefix) for m in self.members]
        return pairwise_sum(dists) / len(dists)


def weight_average(models: Sequence[CopyMixModel]) -> CopyMixModel:
    """Element-wise mean of n-gram counts and copy weights.

    Only structurally identical models can be averaged: same vocabulary,
    n-gram order, smoothing, EOS share and input fields.
    """
    if not models:
        raise ValueError("need at least one model to average")
    first = models[0]
    for i, m in enumerate(models[1:], start=1):
        if m.vocab != first.vocab:
            raise VocabMismatchError(f"model {i} has a different vocabulary")
        for attr in ("order", "alpha", "eos_share", "fields"):
            if getattr(m, attr) != getattr(first, attr):
                raise ValueError(f"model {i} differs in {attr}: {getattr(m, attr)!r} != {getattr(first, attr)!r}")
    n = len(models)
    keys = sorted(set().union(*(m.counts for m in models)))
    counts = {g: sum(m.counts.get(g, 0) for m in models) / n for g in keys}
    return CopyMixModel(
        vocab=first.vocab,
        counts=counts,
        order=first.order,
        alpha=first.alpha,
        lam=sum(m.lam for m in models) / n,
        shard_seed=first.shard_seed,
        eos_share=first.eos_share,
        fields=first.fields,
    )
