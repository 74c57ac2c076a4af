from __future__ import annotations

import math

import numpy as np
import pytest

from gazefit.errors import ParameterError
from gazefit.ngram import (BOS, EOS, UNK, logprob, perplexity, read_arpa,
                           sentence_surprisals, train_kn, write_arpa)


@pytest.fixture(scope="module")
def two_sentence_model():
    # Corpus: "a b" twice. Both orders fall back to the single 0.75 discount
    # (all count-of-counts degenerate), which the hand arithmetic below uses.
    with pytest.warns(UserWarning, match="falling back"):
        return train_kn([["a", "b"], ["a", "b"]], order=2)


# Hand-computed interpolated Kneser-Ney values for the 2-sentence corpus.
#
# Unigrams: continuation counts a=1, b=1, </s>=1 (total 3); D=0.75;
#   p_disc = (1-0.75)/3 = 1/12; lambda = 3*0.75/3 = 3/4; V* = {a,b,</s>,<unk>}
#   p_uni(seen) = 1/12 + (3/4)/4 = 13/48;  p_uni(<unk>) = (3/4)/4 = 9/48.
# Bigrams: each history (<s>), (a), (b) has one continuation with count 2;
#   p_disc = (2-0.75)/2 = 5/8; lambda = 0.75/2 = 3/8;
#   p(b|a) = 5/8 + (3/8)(13/48) = 93/128; backoff p(a|b) = (3/8)(13/48) = 13/128.
P_UNI_SEEN = 13 / 48
P_UNI_UNK = 9 / 48
P_STORED = 93 / 128
P_BACKOFF_SEEN = 13 / 128
P_BACKOFF_UNK = 9 / 128


def test_hand_computed_bigram_values(two_sentence_model):
    m = two_sentence_model
    assert math.exp(logprob(m, ["a"], "b")) == pytest.approx(P_STORED, abs=1e-9)
    assert math.exp(logprob(m, [BOS], "a")) == pytest.approx(P_STORED, abs=1e-9)
    assert math.exp(logprob(m, ["b"], EOS)) == pytest.approx(P_STORED, abs=1e-9)
    assert math.exp(logprob(m, ["b"], "a")) == pytest.approx(P_BACKOFF_SEEN, abs=1e-9)
    assert math.exp(logprob(m, ["a"], "zzz")) == pytest.approx(P_BACKOFF_UNK, abs=1e-9)
    assert math.exp(logprob(m, [], "a")) == pytest.approx(P_UNI_SEEN, abs=1e-9)
    assert math.exp(logprob(m, [], UNK)) == pytest.approx(P_UNI_UNK, abs=1e-9)


def test_manual_backoff_trace(two_sentence_model):
    # Fully novel context: both backoff weights multiply the unigram.
    m = two_sentence_model
    # context (b): bow(b)=3/8, so p(a | zzz b) should equal bow(b)*p_uni(a)
    # after the unknown context token backs off with bow(<unk>)... <unk> is
    # not a stored context, so its implicit backoff weight is 1.
    got = math.exp(logprob(m, ["zzz", "b"], "a"))
    assert got == pytest.approx((3 / 8) * P_UNI_SEEN, abs=1e-9)


def test_unseen_context_equals_unigram(two_sentence_model):
    m = two_sentence_model
    # <unk> never occurs as a context, so no backoff weight applies at all.
    assert logprob(m, ["zzz"], "a") == logprob(m, [], "a")


def test_stored_value_returned_exactly(two_sentence_model):
    m = two_sentence_model
    stored_log10, _ = m.table[("a", "b")]
    assert logprob(m, ["a"], "b") == stored_log10 * math.log(10.0)


def test_degenerate_single_symbol_corpus():
    with pytest.warns(UserWarning):
        m = train_kn([["a"] * 50, ["a"] * 50], order=2)
    assert math.exp(logprob(m, ["a"], "a")) > 0.9


def test_determinism_identical_arpa(tmp_path):
    sents = [["a", "b", "c"], ["a", "c"], ["b", "c", "a"]] * 4
    m1 = train_kn(sents, order=3)
    m2 = train_kn(list(sents), order=3)
    write_arpa(m1, tmp_path / "m1.arpa")
    write_arpa(m2, tmp_path / "m2.arpa")
    assert (tmp_path / "m1.arpa").read_bytes() == (tmp_path / "m2.arpa").read_bytes()


def test_order_must_be_at_least_two():
    with pytest.raises(ParameterError):
        train_kn([["a"]], order=1)


@pytest.fixture(scope="module")
def toy_corpus_model():
    # 1,000 random sentences over a small vocabulary; Zipf-ish lengths and
    # token preferences so the count-of-count discounts are exercised.
    rng = np.random.default_rng(123)
    vocab = [f"w{i}" for i in range(25)]
    probs = np.array([1.0 / (i + 1) for i in range(25)])
    probs /= probs.sum()
    sents = [list(rng.choice(vocab, size=rng.integers(3, 12), p=probs))
             for _ in range(1000)]
    return train_kn(sents, order=4), sents


def test_full_vocabulary_normalization(toy_corpus_model):
    model, sents = toy_corpus_model
    rng = np.random.default_rng(7)
    flat = [t for s in sents for t in s]
    words = model.predictable_vocab
    for _ in range(100):
        k = int(rng.integers(0, 4))
        if rng.random() < 0.7:
            i = int(rng.integers(0, len(flat) - k))
            ctx = flat[i:i + k]  # seen-ish context
        else:
            ctx = list(rng.choice(words[:-2], size=k))  # likely unseen
        total = math.fsum(math.exp(logprob(model, ctx, w)) for w in words)
        assert total == pytest.approx(1.0, abs=1e-6)


def test_count_of_count_discounts_estimated_on_toy_corpus():
    # Orders >= 2 must use real count-of-count discounts here (the unigram
    # level may fall back: a 25-word vocabulary has no singleton
    # continuation counts).
    rng = np.random.default_rng(123)
    vocab = [f"w{i}" for i in range(25)]
    probs = np.array([1.0 / (i + 1) for i in range(25)])
    probs /= probs.sum()
    sents = [list(rng.choice(vocab, size=rng.integers(3, 12), p=probs))
             for _ in range(1000)]
    m = train_kn_quiet(sents, 3)
    for order in (2, 3):
        d1, d2, d3 = m.discounts[order]
        assert 0 < d1 <= 1 and 0 < d2 <= 2 and 0 < d3 <= 3
        assert (d1, d2, d3) != (0.75, 0.75, 0.75)


def test_arpa_round_trip_bit_stable(toy_corpus_model, tmp_path):
    model, sents = toy_corpus_model
    path = tmp_path / "toy.arpa"
    write_arpa(model, path)
    loaded = read_arpa(path)
    rng = np.random.default_rng(99)
    words = model.predictable_vocab + [BOS]
    for _ in range(1000):
        k = int(rng.integers(0, 4))
        ctx = list(rng.choice(words, size=k))
        w = str(rng.choice(words))
        assert logprob(model, ctx, w) == logprob(loaded, ctx, w)
    # a second export is byte-identical too
    path2 = tmp_path / "toy2.arpa"
    write_arpa(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_sentence_surprisals_shape(toy_corpus_model):
    model, _ = toy_corpus_model
    vals = sentence_surprisals(model, ["w0", "w1", "w2"])
    assert len(vals) == 3
    assert all(v > 0 and math.isfinite(v) for v in vals)
    with_eos = sentence_surprisals(model, ["w0", "w1", "w2"], include_eos=True)
    assert len(with_eos) == 4
    assert with_eos[:3] == vals


def test_memorization_smoke_not_strict():
    # Adding data should not catastrophically hurt held-in sentences; smoke
    # only, smoothing may move things slightly.
    base = [["a", "b", "c"]] * 5
    extra = base + [["c", "b", "a"]] * 2
    m_small = train_kn_quiet(base, 2)
    m_large = train_kn_quiet(extra, 2)
    ppl_small = perplexity(sentence_surprisals(m_small, ["a", "b", "c"]))
    ppl_large = perplexity(sentence_surprisals(m_large, ["a", "b", "c"]))
    assert ppl_large < ppl_small * 2.0


def train_kn_quiet(sents, order):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return train_kn(sents, order)


def test_perplexity_examples():
    assert perplexity([0.0, 0.0, 0.0]) == pytest.approx(1.0)
    # uniform model over 8 symbols
    v = 8
    assert perplexity([math.log(v)] * 5) == pytest.approx(v, rel=1e-12)
    # probabilities {0.5, 0.125}: (0.5*0.125)^(-1/2) = 4
    assert perplexity([-math.log(0.5), -math.log(0.125)]) == pytest.approx(4.0, rel=1e-12)


def test_perplexity_domain_errors():
    with pytest.raises(ParameterError):
        perplexity([])
    with pytest.raises(ParameterError):
        perplexity([1.0, 2.0], n=3)
    with pytest.raises(ParameterError):
        perplexity([math.inf])


def _reference_kn(sentences, order):
    """Brute-force interpolated modified Kneser-Ney, written directly from
    the recursion with no shared code: returns p(w | context) as a plain
    function. Conventions match the trainer: raw counts at the top order and
    for grams starting with <s>, continuation counts below, count-of-count
    discounts per order with the 0.75 fallback, and a uniform-interpolated
    unigram over the predictable vocabulary.
    """
    from collections import Counter, defaultdict

    raw = defaultdict(Counter)  # k -> Counter over k-gram tuples
    for toks in sentences:
        seq = (BOS,) + tuple(toks) + (EOS,)
        for k in range(1, order + 1):
            for i in range(len(seq) - k + 1):
                raw[k][seq[i:i + k]] += 1

    def adjusted(k, gram):
        if k == order or gram[0] == BOS:
            return raw[k][gram]
        return sum(1 for g in raw[k + 1] if g[1:] == gram)

    def discounts(k):
        coc = Counter()
        grams = [g for g in raw[k] if not (k == 1 and g[0] == BOS)]
        for g in grams:
            c = adjusted(k, g)
            if 1 <= c <= 4:
                coc[c] += 1
        n1, n2, n3, n4 = coc[1], coc[2], coc[3], coc[4]
        if min(n1, n2, n3, n4) == 0:
            return (0.75, 0.75, 0.75)
        y = n1 / (n1 + 2 * n2)
        d = (1 - 2 * y * n2 / n1, 2 - 3 * y * n3 / n2, 3 - 4 * y * n4 / n3)
        if not (0 < d[0] <= 1 and 0 < d[1] <= 2 and 0 < d[2] <= 3):
            return (0.75, 0.75, 0.75)
        return d

    dks = {k: discounts(k) for k in range(1, order + 1)}
    vocab = sorted(({g[0] for g in raw[1]} | {EOS, UNK}) - {BOS})

    def disc(c, d):
        return d[2] if c >= 3 else (d[1] if c == 2 else (d[0] if c == 1 else 0.0))

    def prob(word, context):
        w = word if (word,) in raw[1] or word in (EOS, UNK) else UNK
        ctx = tuple(t if (t,) in raw[1] or t in (BOS, EOS) else UNK
                    for t in context)[-(order - 1):] if order > 1 else ()

        def p_at(hist, w):
            k = len(hist) + 1
            if k == 1:
                d = dks[1]
                counts = {v: adjusted(1, (v,)) for v in vocab}
                total = sum(counts.values())
                lam = sum(disc(c, d) for c in counts.values()) / total
                c = counts.get(w, 0)
                return max(c - disc(c, d), 0.0) / total + lam / len(vocab)
            d = dks[k]
            conts = {g[-1]: adjusted(k, g) for g in raw[k] if g[:-1] == hist}
            if not conts:
                return p_at(hist[1:], w)
            total = sum(conts.values())
            lam = sum(disc(c, d) for c in conts.values()) / total
            c = conts.get(w, 0)
            return (max(c - disc(c, d), 0.0) / total
                    + lam * p_at(hist[1:], w))

        return p_at(ctx, w)

    return prob, vocab


def test_trainer_matches_brute_force_reference():
    rng = np.random.default_rng(55)
    vocab = [f"t{i}" for i in range(12)]
    probs = np.array([1.0 / (i + 1) for i in range(12)])
    probs /= probs.sum()
    sents = [list(rng.choice(vocab, size=rng.integers(2, 7), p=probs))
             for _ in range(60)]
    for order in (2, 3):
        model = train_kn_quiet(sents, order)
        ref_prob, words = _reference_kn(sents, order)
        flat = [t for s in sents for t in s]
        for trial in range(60):
            k = int(rng.integers(0, order))
            if rng.random() < 0.6:
                i = int(rng.integers(0, len(flat) - k))
                ctx = flat[i:i + k]
            else:
                ctx = list(rng.choice(vocab + ["zz"], size=k))
            w = str(rng.choice(words + ["zz"]))
            got = math.exp(logprob(model, ctx, w))
            want = ref_prob(w, ctx)
            assert got == pytest.approx(want, rel=1e-9), (order, ctx, w)
