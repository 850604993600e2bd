"""Constrained decoding for any :class:`~hesm.model.SequenceModel`.

All three decoders share one step rule: the model's next-token
distribution is filtered by :func:`apply_constraints` (no repeated n-grams,
no EOS before ``min_length`` tokens) and, once a prefix holds
``max_length - 1`` tokens, collapses to EOS. Hypothesis lengths count the
final EOS.

Ties are always broken towards the lexicographically smaller id sequence,
so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Mapping, Sequence

import numpy as np

from hesm.model import NEG_INF, SequenceModel


@dataclass(frozen=True)
class DecodeParams:
    num_beams: int = 4
    length_penalty: float = 0.6
    min_length: int = 5
    max_length: int = 256
    no_repeat_ngram_size: int = 4

    def __post_init__(self):
        if self.num_beams < 1:
            raise ValueError(f"num_beams must be >= 1, got {self.num_beams}")
        if self.max_length < 1:
            raise ValueError(f"max_length must be >= 1, got {self.max_length}")
        if not 0 <= self.min_length <= self.max_length:
            raise ValueError(f"need 0 <= min_length <= max_length, got {self.min_length}, {self.max_length}")
        if self.length_penalty < 0:
            raise ValueError(f"length_penalty must be >= 0, got {self.length_penalty}")
        if self.no_repeat_ngram_size < 0:
            raise ValueError(f"no_repeat_ngram_size must be >= 0, got {self.no_repeat_ngram_size}")

    def updated(self, overrides: Mapping | None) -> "DecodeParams":
        if not overrides:
            return self
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown decode parameters: {sorted(unknown)}")
        return replace(self, **overrides)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]
    logprob: float
    finished: bool = True

    def __len__(self) -> int:
        return len(self.ids)

    def score(self, alpha: float) -> float:
        return length_penalized_score(self.logprob, len(self.ids), alpha)


def length_penalized_score(logprob: float, length: int, alpha: float) -> float:
    """``logprob / length ** alpha``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if alpha == 0:
        return logprob
    return logprob / length ** alpha


def banned_tokens(prefix: Sequence[int], n: int) -> set[int]:
    """Tokens that would complete an ``n``-gram already present in ``prefix``."""
    if n <= 0 or len(prefix) < n:
        return set()
    if n == 1:
        return set(prefix)
    prefix = tuple(prefix)
    tail = prefix[len(prefix) - n + 1:]
    head = tail[0]
    return {
        prefix[i + n - 1]
        for i in range(len(prefix) - n + 1)
        if prefix[i] == head and prefix[i:i + n - 1] == tail
    }


def _mask(dist: np.ndarray, banned: set[int], eos: int) -> np.ndarray:
    if not banned:
        return dist / dist.sum()
    probs = np.array(dist, dtype=np.float64)
    probs[list(banned)] = 0.0
    total = probs.sum()
    if total > 0:
        return probs / total
    forced = eos
    if eos in banned:
        forced = next((i for i in range(len(probs)) if i not in banned), eos)
    probs[:] = 0.0
    probs[forced] = 1.0
    return probs


def apply_constraints(prefix: Sequence[int], dist: np.ndarray, params: DecodeParams, eos: int) -> np.ndarray:
    """Mask repeated n-grams and premature EOS, then renormalize.

    When nothing survives the masks the result is one-hot on EOS, or on the
    lowest-id unmasked token if EOS itself is masked.
    """
    banned = banned_tokens(prefix, params.no_repeat_ngram_size)
    if len(prefix) < params.min_length:
        banned.add(eos)
    return _mask(dist, banned, eos)


def step_distribution(model: SequenceModel, x: tuple, prefix: tuple, params: DecodeParams) -> np.ndarray:
    eos = model.vocab.eos
    if len(prefix) >= params.max_length - 1:
        forced = np.zeros(len(model.vocab))
        forced[eos] = 1.0
        return forced
    return apply_constraints(prefix, model.next_distribution(x, prefix), params, eos)


def _log(probs: np.ndarray) -> np.ndarray:
    if probs.min() > 0:
        return np.log(probs)
    return np.log(probs, out=np.full(probs.shape, NEG_INF), where=probs > 0)


class _StepCache:
    """Constrained step log-probabilities for one ``(model, x)`` pair.

    When no n-gram ban applies, the step depends only on the trailing
    ``model.context_window`` tokens and on whether EOS is still masked, so
    results are shared between prefixes that agree on both. Values are
    identical to ``log(step_distribution(...))``.
    """

    def __init__(self, model: SequenceModel, x: tuple, params: DecodeParams):
        self.model = model
        self.x = x
        self.params = params
        self.window = model.context_window
        self.eos = model.vocab.eos
        self.memo: dict = {}
        forced = np.full(len(model.vocab), NEG_INF)
        forced[self.eos] = 0.0
        self.forced = forced

    def _key(self, prefix: tuple):
        """Memo key, or None when an n-gram ban makes the step prefix-specific."""
        params = self.params
        if len(prefix) >= params.max_length - 1:
            return "forced", None
        banned = banned_tokens(prefix, params.no_repeat_ngram_size)
        early = len(prefix) < params.min_length
        if early:
            banned.add(self.eos)
        if len(banned) > early:
            return None, banned
        ctx = prefix if self.window is None else prefix[max(0, len(prefix) - self.window):]
        return (ctx, early), banned

    def _compute(self, prefix: tuple, banned: set[int]) -> np.ndarray:
        return _log(_mask(self.model.next_distribution(self.x, prefix), banned, self.eos))

    def logprobs(self, prefix: tuple) -> np.ndarray:
        key, banned = self._key(prefix)
        if key == "forced":
            return self.forced
        if key is None:
            return self._compute(prefix, banned)
        hit = self.memo.get(key)
        if hit is None:
            hit = self._compute(prefix, banned)
            hit.setflags(write=False)
            self.memo[key] = hit
        return hit


def beam_search(model: SequenceModel, x: Sequence[int], params: DecodeParams = DecodeParams()) -> list[Hypothesis]:
    """Finished hypotheses ranked by length-penalized score, best first.

    Each step keeps the ``num_beams`` best extensions of all live beams by
    cumulative log-probability (ties to the smaller id sequence);
    extensions ending in EOS move to the finished pool and the rest stay
    live. The search stops once no live beam remains, or once
    ``num_beams`` finished hypotheses exist and no live beam can still
    overtake the worst of them. Since log-probabilities only fall as a
    prefix grows, ``logprob / max_length ** alpha`` bounds every
    continuation of a live beam.
    """
    model.vocab.check_ids(x)
    x = tuple(x)
    eos = model.vocab.eos
    alpha = params.length_penalty
    k = params.num_beams
    steps = _StepCache(model, x, params)
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[Hypothesis] = []
    best_scores: list[tuple[float, tuple[int, ...]]] = []

    for _ in range(params.max_length):
        if len(live) == 1:
            flat = steps.logprobs(live[0][0]) + live[0][1]
        else:
            lps = np.array([lp for _, lp in live])
            flat = (np.array([steps.logprobs(ids) for ids, _ in live]) + lps[:, None]).ravel()
        if flat.size > k:
            kth = flat[flat.argpartition(flat.size - k)[flat.size - k:]].min()
            chosen = np.flatnonzero(flat >= kth) if kth > NEG_INF else np.flatnonzero(flat > NEG_INF)
        else:
            chosen = np.flatnonzero(flat > NEG_INF)
        if chosen.size == 0:
            break
        size = flat.size // len(live)
        candidates = sorted(
            (-float(flat[i]), live[i // size][0] + (i % size,)) for i in chosen.tolist()
        )

        live = []
        for neg_lp, ids in candidates[:k]:
            lp = -neg_lp
            if ids[-1] == eos:
                hyp = Hypothesis(ids, lp, True)
                finished.append(hyp)
                best_scores.append((-hyp.score(alpha), ids))
            else:
                live.append((ids, lp))
        if not live:
            break
        if len(finished) >= k:
            best_scores.sort()
            best_scores = best_scores[:k]
            worst_kept = -best_scores[-1][0]
            top_live = max(lp for _, lp in live)
            bound = top_live if alpha == 0 else top_live / params.max_length ** alpha
            if bound < worst_kept:
                break

    finished.sort(key=lambda h: (-h.score(alpha), h.ids))
    return finished[:k]


def greedy_search(model: SequenceModel, x: Sequence[int], params: DecodeParams = DecodeParams()) -> Hypothesis:
    model.vocab.check_ids(x)
    x = tuple(x)
    eos = model.vocab.eos
    ids: tuple[int, ...] = ()
    lp = 0.0
    while True:
        probs = step_distribution(model, x, ids, params)
        tok = int(np.argmax(probs))
        lp = lp + float(_log(probs)[tok])
        ids = ids + (tok,)
        if tok == eos:
            return Hypothesis(ids, lp, True)


def sample_sequence(
    model: SequenceModel, x: Sequence[int], params: DecodeParams = DecodeParams(), seed: int = 0
) -> Hypothesis:
    """Ancestral sample from the constrained step distributions.

    Randomness comes from numpy's PCG64 bit generator seeded with ``seed``;
    one uniform draw per step is mapped through the cumulative distribution.
    """
    model.vocab.check_ids(x)
    x = tuple(x)
    eos = model.vocab.eos
    rng = np.random.Generator(np.random.PCG64(seed))
    ids: tuple[int, ...] = ()
    lp = 0.0
    while True:
        probs = step_distribution(model, x, ids, params)
        cdf = np.cumsum(probs)
        tok = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        tok = min(tok, len(probs) - 1)
        while probs[tok] <= 0:
            tok -= 1
        lp = lp + float(_log(probs)[tok])
        ids = ids + (tok,)
        if tok == eos:
            return Hypothesis(ids, lp, True)
