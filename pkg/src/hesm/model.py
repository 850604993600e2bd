"""Conditional sequence models behind the ``next_distribution`` interface.

Every decoder and ensembler in the package only ever asks a model for
``p(y_i | x, y_<i)`` through :meth:`SequenceModel.next_distribution`. Two
concrete models live here:

* :class:`TableModel`, a lookup table used to build exhaustive test oracles;
* :class:`CopyMixModel`, a small trainable summarizer mixing a copy
  distribution over the input with a stupid-backoff n-gram model of
  summaries. Nine of these trained on different bootstrap shards stand in
  for the nine fine-tuned members of an ensemble.

Probabilities are float64 numpy vectors of length ``len(vocab)``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from hesm.rouge import ROUGE_L, RougeVariant, score_tokens
from hesm.text import tokenize

NEG_INF = float("-inf")  # stands for log(0) everywhere

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
SEP_A, SEP_S, SEP_O = "<asm>", "<subj>", "<obj>"
SPECIAL_TOKENS = (BOS, EOS, UNK, SEP_A, SEP_S, SEP_O)
SECTION_SEPARATORS = {"A": SEP_A, "S": SEP_S, "O": SEP_O}

DIST_TOLERANCE = 1e-9
BACKOFF_WEIGHT = 0.4
FORMAT_VERSION = 1


class VocabMismatchError(ValueError):
    pass


class Vocab:
    """Dense token <-> id map whose first six ids are the reserved tokens."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = list(SPECIAL_TOKENS)
        self._stoi: dict[str, int] = {tok: i for i, tok in enumerate(self._itos)}
        for tok in tokens:
            if tok not in self._stoi:
                self._stoi[tok] = len(self._itos)
                self._itos.append(tok)
        self.bos = self._stoi[BOS]
        self.eos = self._stoi[EOS]
        self.unk = self._stoi[UNK]
        self.separator_ids = {sec: self._stoi[sep] for sec, sep in SECTION_SEPARATORS.items()}
        self.special_ids = frozenset(range(len(SPECIAL_TOKENS)))

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        """Vocabulary over the tokens of ``texts``, ordered by first appearance."""
        seen: dict[str, None] = {}
        for text in texts:
            for tok in tokenize(text):
                seen.setdefault(tok)
        return cls(seen)

    def __len__(self) -> int:
        return len(self._itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._itos == other._itos

    def __hash__(self) -> int:
        return hash(tuple(self._itos))

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def id(self, token: str) -> int:
        return self._stoi.get(token, self.unk)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    def encode(self, text: str) -> list[int]:
        """Token ids of ``text``; separator literals map to their reserved ids."""
        ids: list[int] = []
        for chunk in _split_separators(text):
            if chunk in SECTION_SEPARATORS.values():
                ids.append(self._stoi[chunk])
            else:
                ids.extend(self.id(tok) for tok in tokenize(chunk))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self._itos[i] for i in ids if i not in self.special_ids)

    def check_ids(self, ids: Iterable[int]) -> None:
        n = len(self._itos)
        for i in ids:
            if not 0 <= i < n:
                raise ValueError(f"token id {i} outside vocabulary of size {n}")


def _split_separators(text: str) -> list[str]:
    chunks = [text]
    for sep in SECTION_SEPARATORS.values():
        nxt = []
        for chunk in chunks:
            pieces = chunk.split(sep)
            for j, piece in enumerate(pieces):
                if j:
                    nxt.append(sep)
                nxt.append(piece)
        chunks = nxt
    return chunks


def check_distribution(probs: np.ndarray, size: int | None = None) -> None:
    if size is not None and probs.shape != (size,):
        raise ValueError(f"distribution has shape {probs.shape}, expected ({size},)")
    if np.isnan(probs).any() or (probs < 0).any():
        raise ValueError("distribution has NaN or negative entries")
    total = float(probs.sum())
    if abs(total - 1.0) > DIST_TOLERANCE:
        raise ValueError(f"distribution sums to {total!r}, not 1")


class SequenceModel:
    """Interface every decoder consumes: ``p(y_i | x, y_<i)`` as a vector."""

    vocab: Vocab
    # number of trailing prefix tokens the distribution depends on; None = all
    context_window: int | None = None

    def next_distribution(self, x: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def distribution(self, x: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
        """``next_distribution`` with id validation."""
        self.vocab.check_ids(x)
        self.vocab.check_ids(prefix)
        return self.next_distribution(tuple(x), tuple(prefix))


# ---------------------------------------------------------------------------
# Table model


class TableModel(SequenceModel):
    """Distributions looked up by ``(x, prefix)``; ``x=None`` keys match any input."""

    def __init__(self, vocab: Vocab, table: Mapping, default: Sequence[float]):
        self.vocab = vocab
        size = len(vocab)
        self.default = _frozen_vector(default, size)
        self.table: dict[tuple, np.ndarray] = {}
        for (x, prefix), probs in table.items():
            key = (None if x is None else tuple(x), tuple(prefix))
            self.table[key] = _frozen_vector(probs, size)

    def next_distribution(self, x, prefix):
        prefix = tuple(prefix)
        hit = self.table.get((tuple(x), prefix))
        if hit is None:
            hit = self.table.get((None, prefix), self.default)
        return hit

    @classmethod
    def from_fixture(cls, data: Mapping) -> "TableModel":
        """Build from the human-writable fixture layout::

            {"tokens": ["a", "b"],
             "default": [...],
             "entries": [{"input": null, "prefix": ["a"], "probs": [...]}, ...]}

        ``tokens`` lists the non-reserved tokens; prefixes and inputs are token
        strings and ``probs`` covers the whole vocabulary (reserved ids first).
        """
        vocab = Vocab(data.get("tokens", ()))
        table = {}
        for entry in data.get("entries", ()):
            x = entry.get("input")
            x_ids = None if x is None else tuple(vocab.id(t) for t in x)
            prefix = tuple(vocab.id(t) for t in entry["prefix"])
            table[(x_ids, prefix)] = entry["probs"]
        return cls(vocab, table, data["default"])

    @classmethod
    def load_fixture(cls, path: str | Path) -> "TableModel":
        return cls.from_fixture(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        entries = []
        for (x, prefix), probs in sorted(self.table.items(), key=lambda kv: (kv[0][0] is not None, kv[0])):
            tok = self.vocab.token
            entries.append({"input": None if x is None else [tok(i) for i in x],
                            "prefix": [tok(i) for i in prefix], "probs": probs.tolist()})
        return {"format": "hesm.table", "version": FORMAT_VERSION,
                "tokens": self.vocab.tokens[len(SPECIAL_TOKENS):],
                "default": self.default.tolist(), "entries": entries}


def _frozen_vector(probs: Sequence[float], size: int) -> np.ndarray:
    vec = np.array(probs, dtype=np.float64)
    check_distribution(vec, size)
    vec.setflags(write=False)
    return vec


# ---------------------------------------------------------------------------
# Copy-mixture n-gram summarizer


@dataclass
class CopyMixModel(SequenceModel):
    """``lam * copy(x) + (1 - lam) * backoff(prefix)``.

    ``counts`` maps n-gram tuples of token ids (orders 1..order) to counts
    accumulated over BOS-padded, EOS-terminated training summaries. ``fields``
    restricts which sections of a separator-delimited input the copy
    distribution reads (``None`` reads everything).
    """

    vocab: Vocab
    counts: dict[tuple[int, ...], float]
    order: int
    alpha: float
    lam: float
    shard_seed: int
    eos_share: float = 0.1
    fields: tuple[str, ...] | None = None
    _context_totals: dict = field(default=None, init=False, repr=False, compare=False)
    _cache: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"copy weight must lie in [0, 1], got {self.lam}")
        if self.alpha <= 0:
            raise ValueError(f"smoothing alpha must be > 0, got {self.alpha}")
        if self.order < 1:
            raise ValueError(f"n-gram order must be >= 1, got {self.order}")
        if not 0.0 < self.eos_share <= 1.0:
            raise ValueError(f"EOS share must lie in (0, 1], got {self.eos_share}")
        if any(c < 0 for c in self.counts.values()):
            raise ValueError("n-gram counts must be non-negative")
        if self.fields is not None:
            self.fields = tuple(self.fields)
        totals: dict[tuple[int, ...], float] = {}
        for gram, c in self.counts.items():
            ctx = gram[:-1]
            totals[ctx] = totals.get(ctx, 0.0) + c
        self._context_totals = totals
        self._cache = {}

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state

    # -- components ---------------------------------------------------------

    def copy_distribution(self, x: Sequence[int]) -> np.ndarray:
        """Uniform over the multiset of readable content tokens of ``x``, plus EOS."""
        last = self._cache.get("copy")
        if last is not None and (last[0] is x or last[0] == x):
            return last[1]
        probs = np.zeros(len(self.vocab))
        content = self._readable_tokens(x)
        if content:
            ids, counts = np.unique(np.array(content, dtype=np.int64), return_counts=True)
            probs[ids] = (1.0 - self.eos_share) * counts / len(content)
            probs[self.vocab.eos] += self.eos_share
        else:
            probs[self.vocab.eos] = 1.0
        probs.setflags(write=False)
        self._cache["copy"] = (x, probs)
        return probs

    def _readable_tokens(self, x: Sequence[int]) -> list[int]:
        vocab = self.vocab
        if self.fields is None:
            return [t for t in x if t not in vocab.special_ids]
        wanted = {vocab.separator_ids[f] for f in self.fields}
        sep_ids = set(vocab.separator_ids.values())
        if not any(t in sep_ids for t in x):
            return [t for t in x if t not in vocab.special_ids]
        out, reading = [], False
        for t in x:
            if t in sep_ids:
                reading = t in wanted
            elif reading and t not in vocab.special_ids:
                out.append(t)
        return out

    def _context(self, prefix: Sequence[int]) -> tuple[int, ...]:
        k = self.order
        if k == 1:
            return ()
        context = (self.vocab.bos,) * (k - 1) + tuple(prefix)
        return context[len(context) - (k - 1):]

    def ngram_distribution(self, prefix: Sequence[int]) -> np.ndarray:
        """Stupid backoff (weight 0.4) from ``order`` down to an add-alpha unigram floor."""
        k = self.order
        context = self._context(prefix)
        key = ("ngram", context)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        scores = self._unigram_floor()
        for n in range(2, k + 1):
            ctx = context[len(context) - (n - 1):]
            scores = BACKOFF_WEIGHT * scores
            if self._context_totals.get(ctx, 0.0) <= 0:
                continue
            total = self._context_totals[ctx]
            for tok, c in self._continuations(ctx):
                if c > 0:
                    scores[tok] = c / total
        probs = scores / scores.sum()
        probs.setflags(write=False)
        self._cache[key] = probs
        return probs

    def _unigram_floor(self) -> np.ndarray:
        floor = self._cache.get("unigrams")
        if floor is None:
            size = len(self.vocab)
            floor = np.full(size, self.alpha)
            for gram, c in self.counts.items():
                if len(gram) == 1:
                    floor[gram[0]] += c
            floor /= self._context_totals.get((), 0.0) + self.alpha * size
            floor.setflags(write=False)
            self._cache["unigrams"] = floor
        return floor

    def _continuations(self, ctx: tuple[int, ...]) -> list[tuple[int, float]]:
        index = self._cache.get("index")
        if index is None:
            index = {}
            for gram, c in self.counts.items():
                if len(gram) > 1:
                    index.setdefault(gram[:-1], []).append((gram[-1], c))
            self._cache["index"] = index
        return index.get(ctx, [])

    @property
    def context_window(self) -> int:
        return self.order - 1

    def next_distribution(self, x, prefix):
        if self.lam == 1.0:
            return self.copy_distribution(x)
        if self.lam == 0.0:
            return self.ngram_distribution(prefix)
        # mixtures for the most recent input, keyed by n-gram context
        mixed = self._cache.get("mixed")
        if mixed is None or not (mixed[0] is x or mixed[0] == x):
            mixed = (x, {})
            self._cache["mixed"] = mixed
        context = self._context(prefix)
        hit = mixed[1].get(context)
        if hit is None:
            hit = self.lam * self.copy_distribution(x) + (1.0 - self.lam) * self.ngram_distribution(prefix)
            hit.setflags(write=False)
            mixed[1][context] = hit
        return hit

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        grams = sorted(self.counts.items())
        return {
            "format": "hesm.copymix",
            "version": FORMAT_VERSION,
            "vocab": self.vocab.tokens[len(SPECIAL_TOKENS):],
            "order": self.order,
            "alpha": self.alpha,
            "lam": self.lam,
            "eos_share": self.eos_share,
            "shard_seed": self.shard_seed,
            "fields": None if self.fields is None else list(self.fields),
            "counts": [[list(g), c] for g, c in grams],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CopyMixModel":
        if data.get("format") != "hesm.copymix":
            raise ValueError(f"not a copy-mixture model file (format={data.get('format')!r})")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model file version {data.get('version')!r}")
        return cls(
            vocab=Vocab(data["vocab"]),
            counts={tuple(g): c for g, c in data["counts"]},
            order=data["order"],
            alpha=data["alpha"],
            lam=data["lam"],
            shard_seed=data["shard_seed"],
            eos_share=data["eos_share"],
            fields=None if data["fields"] is None else tuple(data["fields"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CopyMixModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def count_ngrams(summaries: Iterable[Sequence[int]], order: int, bos: int, eos: int) -> dict:
    counts: Counter = Counter()
    for ids in summaries:
        padded = (bos,) * (order - 1) + tuple(ids) + (eos,)
        start = order - 1
        for i in range(start, len(padded)):
            for n in range(1, order + 1):
                counts[padded[i - n + 1:i + 1]] += 1
    return dict(counts)


def train_copymix(
    corpus: Sequence[tuple[str, str]],
    order: int = 2,
    alpha: float = 0.1,
    lam_grid: Sequence[float] = (0.2, 0.4, 0.6, 0.8),
    shard_seed: int = 0,
    *,
    vocab: Vocab | None = None,
    fields: tuple[str, ...] | None = None,
    eos_share: float = 0.1,
    train_fraction: float = 0.8,
) -> CopyMixModel:
    """Fit a copy-mixture model on a seeded bootstrap shard of ``corpus``.

    The shard is an 80% sample drawn with replacement (numpy PCG64 keyed by
    ``shard_seed``); the copy weight is picked from ``lam_grid`` by the
    log-likelihood of the records that were not drawn. When every record was
    drawn, the whole corpus serves as the held-out set.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    if not lam_grid:
        raise ValueError("lam_grid must not be empty")
    if order < 1:
        raise ValueError(f"n-gram order must be >= 1, got {order}")
    if vocab is None:
        vocab = Vocab.build(text for pair in corpus for text in pair)
    n = len(corpus)
    rng = np.random.Generator(np.random.PCG64(shard_seed))
    drawn = rng.integers(0, n, size=max(1, int(round(train_fraction * n))))
    drawn_set = set(drawn.tolist())
    held_out = [i for i in range(n) if i not in drawn_set] or list(range(n))

    encoded = [(vocab.encode(src), vocab.encode(tgt)) for src, tgt in corpus]
    counts = count_ngrams((encoded[i][1] for i in drawn.tolist()), order, vocab.bos, vocab.eos)
    base = CopyMixModel(vocab, counts, order, alpha, 0.0, shard_seed, eos_share, fields)

    # p(y_t) is linear in lam, so one pass over the held-out set scores the whole grid.
    copy_p, ngram_p = [], []
    for i in held_out:
        x, y = tuple(encoded[i][0]), encoded[i][1] + [vocab.eos]
        copy = base.copy_distribution(x)
        for t, tok in enumerate(y):
            copy_p.append(copy[tok])
            ngram_p.append(base.ngram_distribution(y[:t])[tok])
    copy_arr, ngram_arr = np.array(copy_p), np.array(ngram_p)
    best_lam, best_ll = None, NEG_INF
    for lam in lam_grid:
        with np.errstate(divide="ignore"):
            ll = float(np.log(lam * copy_arr + (1.0 - lam) * ngram_arr).sum())
        if best_lam is None or ll > best_ll:
            best_lam, best_ll = float(lam), ll
    return CopyMixModel(vocab, counts, order, alpha, best_lam, shard_seed, eos_share, fields)


# ---------------------------------------------------------------------------
# Likelihood and losses


def sequence_logprob(model: SequenceModel, x: Sequence[int], y: Sequence[int]) -> float:
    """``sum_i ln p(y_i | x, y_<i)``; ``y`` must end with EOS. Returns ``NEG_INF`` on a zero factor."""
    if not y:
        raise ValueError("sequence must be non-empty")
    vocab = model.vocab
    if y[-1] != vocab.eos:
        raise ValueError("sequence must terminate with EOS")
    vocab.check_ids(x)
    vocab.check_ids(y)
    x = tuple(x)
    total = 0.0
    for i, tok in enumerate(y):
        p = float(model.next_distribution(x, tuple(y[:i]))[tok])
        if p <= 0.0:
            return NEG_INF
        total += math.log(p)
    return total


@dataclass(frozen=True)
class RlLossInputs:
    """Inputs to the self-critical loss.

    ``greedy``, ``sampled`` and ``reference`` are token-id sequences scored
    after decoding to text with ``vocab``; ``sampled_logprob`` is
    ``log P(sampled | x)``.
    """

    greedy: Sequence[int]
    sampled: Sequence[int]
    reference: Sequence[int]
    sampled_logprob: float
    vocab: Vocab
    reward: RougeVariant = ROUGE_L
    reward_field: str = "f1"
    gamma: float = 0.9
    ml_loss: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.sampled_logprob > 0:
            raise ValueError("log-probability must be <= 0")
        if self.ml_loss < 0:
            raise ValueError("ML loss must be >= 0")

    def reward_of(self, ids: Sequence[int]) -> float:
        hyp = tokenize(self.vocab.decode(ids))
        ref = tokenize(self.vocab.decode(self.reference))
        return score_tokens(hyp, ref, self.reward).field(self.reward_field)


def self_critical_loss(greedy_reward: float, sampled_reward: float, sampled_logprob: float) -> float:
    return (greedy_reward - sampled_reward) * sampled_logprob


def rl_loss(inputs: RlLossInputs) -> float:
    """``(R(greedy, ref) - R(sampled, ref)) * log P(sampled | x)``."""
    if list(inputs.greedy) == list(inputs.sampled):
        return 0.0
    return self_critical_loss(
        inputs.reward_of(inputs.greedy), inputs.reward_of(inputs.sampled), inputs.sampled_logprob
    )


def combined_loss(l_rl: float, l_ml: float, gamma: float = 0.9) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if l_ml < 0:
        raise ValueError("ML loss must be >= 0")
    return gamma * l_rl + (1.0 - gamma) * l_ml


def load_model(path: str | Path) -> SequenceModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    fmt = data.get("format")
    if fmt == "hesm.copymix":
        return CopyMixModel.from_dict(data)
    if fmt == "hesm.table" or "default" in data:
        return TableModel.from_fixture(data)
    raise ValueError(f"unrecognised model file format {fmt!r} in {path}")
