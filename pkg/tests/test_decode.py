import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hesm.decode import (DecodeParams, apply_constraints, banned_tokens, beam_search, greedy_search,
                         length_penalized_score, sample_sequence, step_distribution)
from hesm.model import SEP_A, CopyMixModel, TableModel, Vocab
from conftest import random_table_model
from oracles import constrained_step, exhaustive_best

V = Vocab(["a", "b", "c"])
A, B, C, EOS = V.id("a"), V.id("b"), V.id("c"), V.eos


def dist(**mass):
    out = np.zeros(len(V))
    for name, p in mass.items():
        out[EOS if name == "eos" else V.id(name)] = p
    return out


def table(entries, default=None):
    return TableModel(V, {(None, tuple(k)): d for k, d in entries.items()},
                      dist(eos=1.0) if default is None else default)


def test_length_penalty_examples():
    assert length_penalized_score(-2.0, 4, 0.6) == pytest.approx(-0.870551, abs=1e-6)
    assert length_penalized_score(-1.7, 9, 0.0) == -1.7
    assert length_penalized_score(-3.0, 1, 0.8) == -3.0
    with pytest.raises(ValueError):
        length_penalized_score(-1.0, 0, 0.6)


def test_params_validation():
    for bad in ({"num_beams": 0}, {"max_length": 0}, {"min_length": 9, "max_length": 4},
                {"length_penalty": -0.1}, {"no_repeat_ngram_size": -1}):
        with pytest.raises(ValueError):
            DecodeParams(**bad)
    assert DecodeParams() == DecodeParams(4, 0.6, 5, 256, 4)


def test_ngram_rule_bans_completion_of_seen_fourgram():
    # the trailing trigram (a, b, c) already opened the 4-gram (a, b, c, a)
    prefix = (A, B, C, A, B, C)
    assert banned_tokens(prefix, 4) == {A}
    out = apply_constraints(prefix, dist(a=0.5, b=0.25, eos=0.25), DecodeParams(min_length=0), EOS)
    np.testing.assert_allclose(out, dist(b=0.5, eos=0.5))


def test_ngram_rule_without_repeat_changes_nothing():
    prefix = (A, B, C, B)
    assert banned_tokens(prefix, 4) == set()
    d = dist(a=0.2, b=0.3, c=0.1, eos=0.4)
    np.testing.assert_array_equal(apply_constraints(prefix, d, DecodeParams(min_length=0), EOS), d / d.sum())


def test_min_length_masks_eos():
    out = apply_constraints((A,), dist(a=0.5, eos=0.5), DecodeParams(min_length=3), EOS)
    assert out[EOS] == 0.0 and out[A] == 1.0


def test_constraints_disabled_is_identity():
    d = dist(a=0.25, b=0.25, eos=0.5)
    out = apply_constraints((A, A, A, A), d, DecodeParams(min_length=0, no_repeat_ngram_size=0), EOS)
    np.testing.assert_array_equal(out, d)


def test_all_mass_removed_falls_back():
    # every supported token banned: EOS allowed, so it is forced
    out = apply_constraints((A, A), dist(a=1.0), DecodeParams(min_length=0, no_repeat_ngram_size=2), EOS)
    assert out[EOS] == 1.0
    # EOS banned too: the lowest unbanned id takes the mass
    out = apply_constraints((A, A), dist(a=1.0), DecodeParams(min_length=5, no_repeat_ngram_size=2), EOS)
    assert out[0] == 1.0 and out.sum() == 1.0


def test_single_path_model():
    m = table({(): dist(b=1.0), (B,): dist(c=1.0)})
    hyps = beam_search(m, (), DecodeParams(min_length=0))
    assert hyps[0].ids == (B, C, EOS)
    assert hyps[0].logprob == 0.0
    assert hyps[0].score(0.6) == 0.0


def test_width_27_equals_enumeration():
    rng = np.random.default_rng(2)
    params = DecodeParams(num_beams=27, length_penalty=0.0, min_length=1, max_length=4, no_repeat_ngram_size=0)
    for _ in range(50):
        m = random_table_model(rng, 2, 3)
        ids, _ = exhaustive_best(m, (), params)
        assert beam_search(m, (), params)[0].ids == ids


def test_beam_matches_exhaustive_oracle():
    rng = np.random.default_rng(21)
    for trial in range(200):
        n, length = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        m = random_table_model(rng, n, length - 1, quantized=bool(trial % 2))
        params = DecodeParams((n + 1) ** length, (0.0, 0.6, 1.0)[trial % 3], int(rng.integers(0, length + 1)),
                              length, int(rng.integers(0, 3)))
        ids, lp = exhaustive_best(m, (), params)
        top = beam_search(m, (), params)[0]
        assert top.ids == ids
        assert top.logprob == lp


def test_width_one_is_greedy(small_roster):
    rng = np.random.default_rng(3)
    params = DecodeParams(num_beams=1, max_length=30)
    for _ in range(60):
        m = random_table_model(rng, 3, 3)
        g = greedy_search(m, (), params)
        b = beam_search(m, (), params)[0]
        assert (g.ids, g.logprob) == (b.ids, b.logprob)
    for name in ("θ_A-1", "θ_AS-4"):
        m = small_roster[name]
        x = m.vocab.encode(f"{SEP_A} acute kidney injury sepsis pneumonia")
        g, b = greedy_search(m, x, params), beam_search(m, x, params)[0]
        assert (g.ids, g.logprob) == (b.ids, b.logprob)


def test_greedy_tie_goes_to_lowest_id():
    m = table({(): dist(b=0.4, c=0.4, eos=0.2)})
    assert greedy_search(m, (), DecodeParams(min_length=0)).ids[0] == B


def test_greedy_respects_min_length():
    m = table({}, default=dist(a=0.1, eos=0.9))
    out = greedy_search(m, (), DecodeParams(min_length=3, no_repeat_ngram_size=0))
    assert len(out.ids) - 1 >= 3


def test_force_termination_at_max_length():
    m = table({}, default=dist(a=0.6, b=0.4))
    for method in (lambda p: beam_search(m, (), p)[0], lambda p: greedy_search(m, (), p)):
        hyp = method(DecodeParams(min_length=0, max_length=4, no_repeat_ngram_size=0))
        assert len(hyp.ids) == 4 and hyp.ids[-1] == EOS and hyp.finished


def test_monotonicity_fails_on_hand_built_model():
    """Width 1 follows a (0.5) then a (0.4) and stops: p = 0.2. Width 2 keeps
    (b, a) and (b, b) at 0.225 each, dropping (a, a) for good; their
    continuations reach only 0.1125. A wider beam can therefore lose."""
    m = table({
        (): dist(a=0.5, b=0.45, eos=0.05),
        (A,): dist(a=0.4, b=0.3, eos=0.3),
        (A, A): dist(eos=1.0),
        (B,): dist(a=0.5, b=0.5),
        (B, A): dist(a=0.5, b=0.5),
        (B, B): dist(a=0.5, b=0.5),
    })
    p1 = DecodeParams(num_beams=1, length_penalty=0.0, min_length=0, max_length=4, no_repeat_ngram_size=0)
    p2 = DecodeParams(num_beams=2, length_penalty=0.0, min_length=0, max_length=4, no_repeat_ngram_size=0)
    one, two = beam_search(m, (), p1)[0], beam_search(m, (), p2)[0]
    assert one.ids == (A, A, EOS)
    assert one.logprob == pytest.approx(math.log(0.2))
    assert two.ids == (B, A, A, EOS)
    assert two.logprob == pytest.approx(math.log(0.1125))
    assert two.score(0.0) < one.score(0.0)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 4), st.sampled_from([0.0, 0.6, 1.0]))
def test_no_width_beats_the_exhaustive_optimum(seed, n, length, alpha):
    """What does hold: every width's top-1 is bounded by the full-width result,
    which is the exhaustive optimum."""
    m = random_table_model(np.random.default_rng(seed), n, length - 1)
    full = DecodeParams((n + 1) ** length, alpha, 0, length, 0)
    best = beam_search(m, (), full)[0].score(alpha)
    ids, lp = exhaustive_best(m, (), full)
    assert best == length_penalized_score(lp, len(ids), alpha)
    for k in range(1, 5):
        top = beam_search(m, (), DecodeParams(k, alpha, 0, length, 0))[0]
        assert top.score(alpha) <= best


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(2, 7), st.integers(0, 3), st.integers(0, 3))
def test_hypothesis_invariants(seed, k, length, min_length, ngram):
    m = random_table_model(np.random.default_rng(seed), 3, 2)
    params = DecodeParams(k, 0.6, min(min_length, length), length, ngram)
    for hyp in beam_search(m, (), params):
        assert params.min_length <= len(hyp.ids) <= params.max_length
        assert hyp.finished and hyp.ids[-1] == EOS and EOS not in hyp.ids[:-1]
        assert hyp.logprob <= 0.0
        lp, running = 0.0, []
        for i, tok in enumerate(hyp.ids):
            step = math.log(constrained_step(m, (), hyp.ids[:i], params)[tok])
            lp += step
            running.append(lp)
        assert all(b <= a for a, b in zip(running, running[1:]))
        assert hyp.logprob == pytest.approx(lp)
        forced = len(hyp.ids) == params.max_length
        if ngram and not forced:
            body = hyp.ids
            grams = [body[i:i + ngram] for i in range(len(body) - ngram + 1)]
            assert len(grams) == len(set(grams))


def test_sampling_frequency():
    m = table({}, default=dist(a=0.7, eos=0.3))
    params = DecodeParams(min_length=0, max_length=2, no_repeat_ngram_size=0)
    hits = sum(sample_sequence(m, (), params, seed).ids[0] == A for seed in range(10_000))
    assert abs(hits / 10_000 - 0.7) <= 0.02


def test_sampling_determinism(small_roster):
    m = small_roster["θ_AS-3"]
    x = m.vocab.encode(f"{SEP_A} chronic heart failure atrial fibrillation")
    params = DecodeParams(max_length=20)
    assert sample_sequence(m, x, params, 9) == sample_sequence(m, x, params, 9)
    det = table({(): dist(c=1.0), (C,): dist(a=1.0)})
    for seed in range(5):
        assert sample_sequence(det, (), DecodeParams(min_length=0), seed) == greedy_search(det, (), DecodeParams(min_length=0))


def test_decoders_reject_out_of_vocab_input():
    m = table({})
    with pytest.raises(ValueError):
        beam_search(m, (len(V),))


class _Unwindowed(CopyMixModel):
    """Same distributions, but decoders may not assume a finite context."""

    @property
    def context_window(self):
        return None


def test_context_memoization_is_transparent(small_roster):
    base = small_roster["θ_A-2"]
    plain = _Unwindowed(base.vocab, base.counts, base.order, base.alpha, base.lam, base.shard_seed,
                        base.eos_share, base.fields)
    for text in ("acute kidney injury sepsis", "pneumonia copd exacerbation hypertension diabetes"):
        x = base.vocab.encode(f"{SEP_A} {text}")
        for params in (DecodeParams(), DecodeParams(num_beams=6, no_repeat_ngram_size=2, max_length=40)):
            assert beam_search(base, x, params) == beam_search(plain, x, params)


def test_step_distribution_forces_eos_at_limit():
    m = table({}, default=dist(a=1.0))
    out = step_distribution(m, (), (A, A), DecodeParams(min_length=0, max_length=3, no_repeat_ngram_size=0))
    assert out[EOS] == 1.0
