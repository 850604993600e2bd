"""Independent reference implementations used as test oracles.

None of these reuse the library's algorithms: LCS is checked against
subsequence enumeration and a textbook DP table, beam search against
enumeration of every terminating sequence, MBR against a double loop over
its own ROUGE-L, and greedy-best against every sentence subset.
"""

from __future__ import annotations

import itertools
import re
from collections import Counter
from fractions import Fraction

import numpy as np


def words(text):
    return [t for t in re.split(r"[^0-9a-z]+", text.lower()) if t]


# -- LCS ---------------------------------------------------------------------


def lcs_brute(a, b):
    """Longest subsequence of the shorter side that is also a subsequence of the other."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)

    def is_subseq(sub, seq):
        it = iter(seq)
        return all(tok in it for tok in sub)

    for size in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), size):
            if is_subseq([short[i] for i in idx], long_):
                return size
    return 0


def lcs_table(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def rouge_l_f1(hyp, ref):
    h, r = words(hyp), words(ref)
    lcs = lcs_table(h, r)
    return f1(lcs / len(h) if h else 0.0, lcs / len(r) if r else 0.0)


def rouge_1_f1(hyp_counts, ref_counts):
    overlap = sum(min(c, ref_counts[t]) for t, c in hyp_counts.items())
    hn, rn = sum(hyp_counts.values()), sum(ref_counts.values())
    return f1(overlap / hn if hn else 0.0, overlap / rn if rn else 0.0)


# -- MBR ---------------------------------------------------------------------


def rouge_l_f1_exact(hyp, ref):
    h, r = words(hyp), words(ref)
    lcs = lcs_table(h, r)
    if lcs == 0:
        return Fraction(0)
    p, q = Fraction(lcs, len(h)), Fraction(lcs, len(r))
    return 2 * p * q / (p + q)


def mbr_brute(texts):
    """(selected index, consensus scores) by an exact double loop, first index on ties."""
    exact = [sum((rouge_l_f1_exact(h, r) for r in texts), Fraction(0)) for h in texts]
    best = max(range(len(texts)), key=lambda i: (exact[i], -i))
    return best, [float(s) for s in exact]


# -- decoding ----------------------------------------------------------------


def constrained_step(model, x, prefix, params):
    """The constrained next-token distribution, rebuilt from the rules."""
    size = len(model.vocab)
    eos = model.vocab.eos
    if len(prefix) >= params.max_length - 1:
        out = np.zeros(size)
        out[eos] = 1.0
        return out
    probs = np.array(model.next_distribution(x, prefix), dtype=np.float64)
    banned = set()
    n = params.no_repeat_ngram_size
    if n > 0 and len(prefix) >= n:
        seen = {tuple(prefix[i:i + n]) for i in range(len(prefix) - n + 1)}
        for tok in range(size):
            if tuple(prefix[len(prefix) - n + 1:]) + (tok,) in seen:
                banned.add(tok)
    if len(prefix) < params.min_length:
        banned.add(eos)
    if not banned:
        return probs / probs.sum()
    for tok in banned:
        probs[tok] = 0.0
    if probs.sum() > 0:
        return probs / probs.sum()
    target = eos if eos not in banned else min(t for t in range(size) if t not in banned)
    out = np.zeros(size)
    out[target] = 1.0
    return out


def enumerate_finished(model, x, params):
    """Every terminating sequence with positive probability, as (ids, logprob)."""
    eos = model.vocab.eos
    out = []
    stack = [((), 0.0)]
    while stack:
        prefix, lp = stack.pop()
        probs = constrained_step(model, x, prefix, params)
        logs = np.log(np.where(probs > 0, probs, 1.0))
        for tok in range(len(probs)):
            if probs[tok] <= 0:
                continue
            ids, total = prefix + (tok,), lp + float(logs[tok])
            if tok == eos:
                out.append((ids, total))
            else:
                stack.append((ids, total))
    return out


def penalized(lp, length, alpha):
    return lp if alpha == 0 else lp / length ** alpha


def exhaustive_best(model, x, params):
    """Argmax of the length-penalized score; ties to the smaller id sequence."""
    paths = enumerate_finished(model, x, params)
    return min(paths, key=lambda p: (-penalized(p[1], len(p[0]), params.length_penalty), p[0]))


# -- extractive oracle -------------------------------------------------------


def best_subset_f1(pool, reference):
    ref = Counter(words(reference))
    counts = [Counter(words(s)) for s in pool]
    best = 0.0
    for size in range(1, len(pool) + 1):
        for idx in itertools.combinations(range(len(pool)), size):
            total = Counter()
            for i in idx:
                total += counts[i]
            best = max(best, rouge_1_f1(total, ref))
    return best


def greedy_simulation(pool, reference):
    """Round-by-round replay of the greedy rule: indices chosen and F1 after each."""
    ref = Counter(words(reference))
    counts = [Counter(words(s)) for s in pool]
    chosen, trace, current, summary = [], [], 0.0, Counter()
    while True:
        gains = [(rouge_1_f1(summary + counts[i], ref), i) for i in range(len(pool)) if i not in chosen]
        if not gains:
            break
        top = max(g for g, _ in gains)
        if top <= current:
            break
        pick = min(i for g, i in gains if g == top)
        chosen.append(pick)
        summary += counts[pick]
        current = top
        trace.append(top)
    return chosen, trace
