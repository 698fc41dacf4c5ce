from fractions import Fraction

import numpy as np
import pytest

from docmt.corpus import Corpus, Document, Origin, ParallelDocument, Sentence
from docmt.datamix import (
    EmpiricalSampler,
    FilterScore,
    MixRecipe,
    corpus_length_sampler,
    dual_xe_score,
    filter_corpus,
    make_fake_documents,
    mix_corpora,
    read_scores,
    sample_subdocuments,
    upsample,
    write_scores,
)
from docmt.errors import EmptyCorpus, EmptySentence, LengthMismatch
from docmt.model.config import TransformerConfig
from docmt.model.params import init_params
from docmt.model.transformer import make_batch, translation_loss_sum


def _pdoc(n, doc_id="d", origin=Origin.UNKNOWN):
    src = Document(tuple(Sentence(f"s{i}") for i in range(n)), origin, doc_id)
    tgt = Document(tuple(Sentence(f"t{i}") for i in range(n)), origin, doc_id)
    return ParallelDocument(src, tgt)


def enumerate_proper_spans(n):
    """Oracle: all contiguous proper spans of an n-sentence document."""
    return {(s, l) for s in range(n) for l in range(1, n - s + 1)
            if not (s == 0 and l == n)}


def test_single_sentence_document_has_no_subdocuments():
    assert sample_subdocuments(_pdoc(1), rng_seed=0) == []


def test_three_sentence_document_yields_all_five_spans():
    subs = sample_subdocuments(_pdoc(3), max_per_doc=10, rng_seed=1)
    assert len(subs) == 5  # n(n+1)/2 - 1
    got = set()
    for sub in subs:
        first = int(sub.src.sentences[0].text[1:])
        got.add((first, len(sub)))
    assert got == enumerate_proper_spans(3)
    for sub in subs:
        assert [s.text[1:] for s in sub.src.sentences] == \
            [t.text[1:] for t in sub.tgt.sentences]


def test_hundred_sentence_document_capped_at_ten():
    subs = sample_subdocuments(_pdoc(100), max_per_doc=10, rng_seed=2)
    assert len(subs) == 10
    seen = set()
    for sub in subs:
        assert 1 <= len(sub) < 100
        first = int(sub.src.sentences[0].text[1:])
        span = (first, len(sub))
        assert span not in seen  # no duplicates within one call
        seen.add(span)
        texts = [s.text for s in sub.src.sentences]
        assert texts == [f"s{first + k}" for k in range(len(sub))]  # contiguous


def test_subdocument_sampling_deterministic():
    a = sample_subdocuments(_pdoc(20), rng_seed=7)
    b = sample_subdocuments(_pdoc(20), rng_seed=7)
    assert [d.id for d in a] == [d.id for d in b]


def test_fake_documents_constant_sampler():
    pairs = [(f"a{i}", f"b{i}") for i in range(10)]
    corpus = make_fake_documents(pairs, lambda rng: 5, rng_seed=0)
    assert [len(d) for d in corpus.documents] == [5, 5]
    assert all(d.origin == Origin.SYNTHETIC for d in corpus.documents)


def test_fake_documents_partition_property():
    rng = np.random.default_rng(3)
    pairs = [(f"a{i}", f"b{i}") for i in range(137)]
    sampler = EmpiricalSampler(rng.integers(1, 9, size=50))
    corpus = make_fake_documents(pairs, sampler, rng_seed=4)
    rebuilt = [(a.text, b.text) for d in corpus.documents
               for a, b in zip(d.src.sentences, d.tgt.sentences)]
    assert rebuilt == pairs


def test_fake_document_lengths_match_sampler_distribution():
    # two-sample KS between generated doc lengths and the sampler's own draws
    rng = np.random.default_rng(5)
    base_lengths = rng.integers(1, 15, size=400)
    sampler = EmpiricalSampler(base_lengths)
    n_pairs = 60_000
    pairs = [("a", "b")] * n_pairs
    corpus = make_fake_documents(pairs, sampler, rng_seed=6)
    got = np.asarray([len(d) for d in corpus.documents], dtype=float)[:-1]
    ref_rng = np.random.default_rng(7)
    ref = np.asarray([sampler.sample(ref_rng) for _ in range(10_000)], dtype=float)

    # KS statistic computed directly from the two empirical CDFs
    grid = np.unique(np.concatenate([got, ref]))
    cdf_got = np.searchsorted(np.sort(got), grid, side="right") / got.size
    cdf_ref = np.searchsorted(np.sort(ref), grid, side="right") / ref.size
    assert np.abs(cdf_got - cdf_ref).max() < 0.05


def _corpus_of_docs(k, sentences_each=1):
    docs = tuple(_pdoc(sentences_each, doc_id=f"d{i}") for i in range(k))
    return Corpus(docs, "parallel")


def test_upsample_identity():
    corpus = _corpus_of_docs(10, 10)
    out = upsample(corpus, 100, rng_seed=0)
    assert out == corpus


def test_upsample_three_and_a_half_copies():
    corpus = _corpus_of_docs(10, 10)  # 100 sentences
    out = upsample(corpus, 350, rng_seed=1)
    assert abs(out.sentence_count() - 350) < 10  # within one document
    from collections import Counter
    base = Counter()
    for d in out.documents:
        base[d.id.split("@")[0]] += 1
    assert all(v >= 3 for v in base.values())  # floor(350/100) full copies


def test_upsample_seeds_differ_only_in_remainder():
    corpus = _corpus_of_docs(10, 10)
    a = upsample(corpus, 350, rng_seed=1)
    b = upsample(corpus, 350, rng_seed=2)
    assert [d.id for d in a.documents[:30]] == [d.id for d in b.documents[:30]]
    tail_a = {d.id.split("@")[0] for d in a.documents[30:]}
    tail_b = {d.id.split("@")[0] for d in b.documents[30:]}
    assert tail_a != tail_b  # different remainder samples (w.h.p. for these seeds)


def test_upsample_empty_corpus():
    with pytest.raises(EmptyCorpus):
        upsample(Corpus((), "parallel"), 10)


# --- dual cross-entropy ------------------------------------------------------

def tiny_model(seed, vocab=24):
    config = TransformerConfig(vocab_size=vocab, depth=1, model_dim=16,
                               ff_dim=16, heads=2, max_len=32, dtype="float64")
    return init_params(config, seed), config


def test_tied_models_score_equals_component():
    model = tiny_model(0)
    pair = ([9, 10, 11], [9, 10, 11])  # same lengths both ways
    score = dual_xe_score(model, model, pair)
    fwd, bwd = score.components
    assert fwd == pytest.approx(bwd)  # symmetric pair under one model
    assert score.value == pytest.approx(fwd)


def test_uniform_model_scores_log_vocab():
    params, config = tiny_model(1)
    params["out.w"][:] = 0.0
    params["out.b"][:] = 0.0
    model = (params, config)
    score = dual_xe_score(model, model, ([9, 10], [11, 12, 13]))
    assert score.components[0] == pytest.approx(np.log(config.vocab_size))
    assert score.components[1] == pytest.approx(np.log(config.vocab_size))


def test_empty_sentence_rejected():
    model = tiny_model(2)
    with pytest.raises(EmptySentence):
        dual_xe_score(model, model, ([], [9]))


def test_ranking_matches_chain_rule_oracle():
    fwd = tiny_model(3)
    bwd = tiny_model(4)
    rng = np.random.default_rng(5)
    pairs = [([int(x) for x in rng.integers(9, 24, size=rng.integers(1, 6))],
              [int(x) for x in rng.integers(9, 24, size=rng.integers(1, 6))])
             for _ in range(50)]

    def oracle_xe(model, src, tgt):
        # chain rule: mean over positions of -log p(token | prefix, src)
        params, config = model
        batch = make_batch([src], [tgt])
        from docmt.model.transformer import decoder_forward, decoder_input, encoder_forward
        enc, _ = encoder_forward(params, config, batch.src, batch.src_len)
        dec, _ = decoder_forward(params, config, decoder_input(batch.tgt),
                                 batch.tgt_len, enc, batch.src_len)
        total = 0.0
        full = tgt + [8]  # <EOS>
        for t, tok in enumerate(full):
            logits = dec[0, t] @ params["out.w"] + params["out.b"]
            mx = logits.max()
            logp = logits - mx - np.log(np.exp(logits - mx).sum())
            total -= logp[tok]
        return total / len(full)

    scores = [dual_xe_score(fwd, bwd, p) for p in pairs]
    oracle = [FilterScore.from_components(oracle_xe(fwd, s, t), oracle_xe(bwd, t, s))
              for s, t in pairs]
    got_rank = sorted(range(50), key=lambda i: scores[i].value)
    want_rank = sorted(range(50), key=lambda i: oracle[i].value)
    assert got_rank == want_rank
    for got, want in zip(scores, oracle):
        assert got.value == pytest.approx(want.value, rel=1e-9)


def test_filter_score_invariants():
    rng = np.random.default_rng(6)
    for _ in range(100):
        f, b = rng.uniform(0, 10, size=2)
        s = FilterScore.from_components(f, b)
        assert s.value == pytest.approx(
            FilterScore.from_components(b, f).value)  # symmetric
        mid = (f + b) / 2
        assert FilterScore.from_components(mid, mid).value <= s.value + 1e-12
        assert s.value == pytest.approx(abs(f - b) + 0.5 * (f + b))


def test_filter_corpus_keep_half():
    corpus = _corpus_of_docs(4)
    scores = [FilterScore.from_components(x, x) for x in (3.0, 1.0, 2.0, 4.0)]
    kept = filter_corpus(corpus, scores, Fraction(1, 2))
    assert [d.id for d in kept.documents] == ["d1", "d2"]


def test_filter_corpus_identity_and_ties():
    corpus = _corpus_of_docs(4)
    same = [FilterScore.from_components(1.0, 1.0)] * 4
    assert filter_corpus(corpus, same, 1) == corpus
    kept = filter_corpus(corpus, same, Fraction(1, 2))
    assert [d.id for d in kept.documents] == ["d0", "d1"]  # index tie-break


def test_filter_corpus_length_mismatch():
    with pytest.raises(LengthMismatch):
        filter_corpus(_corpus_of_docs(3), [], 1)


def test_scores_file_round_trip(tmp_path):
    scores = [FilterScore.from_components(1.25, 0.5),
              FilterScore.from_components(0.0, 2.0)]
    path = tmp_path / "scores.tsv"
    write_scores(scores, str(path))
    again = read_scores(str(path))
    for a, b in zip(scores, again):
        assert a.value == pytest.approx(b.value, abs=1e-5)


def test_mix_recipe_fractions_validated():
    with pytest.raises(ValueError):
        MixRecipe((("a", Fraction(1, 2)), ("b", Fraction(1, 3))))


def test_mix_corpora_ratios():
    corpora = {
        "small": _corpus_of_docs(5, 2),   # 10 sentences
        "large": Corpus(tuple(_pdoc(2, doc_id=f"L{i}") for i in range(100)),
                        "parallel"),      # 200 sentences
    }
    recipe = MixRecipe((("small", Fraction(1, 2)), ("large", Fraction(1, 2))),
                       seed=3)
    mixed = mix_corpora(recipe, corpora, total_sentences=200)
    from_small = sum(len(d) for d in mixed.documents if d.id.startswith("small/"))
    from_large = sum(len(d) for d in mixed.documents if d.id.startswith("large/"))
    assert abs(from_small - 100) <= 2
    assert abs(from_large - 100) <= 2
