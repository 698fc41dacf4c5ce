"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criteria 2-6 are toy-scale experiments; criterion 7 reruns every experiment
with identical seeds in single-threaded mode and demands bit-identical
metrics. Expect the full module to take on the order of an hour; run it with
`pytest tests/test_acceptance.py -v -s`.
"""

import math
import time

import numpy as np
import pytest

from docmt.bleu import bleu
from docmt.corpus import (
    Corpus,
    Document,
    Origin,
    ParallelDocument,
    Sentence,
    escape_markup,
    load_documents,
    write_documents,
)
from docmt.datamix import make_fake_documents, sample_subdocuments, upsample
from docmt.decode import DecodeConfig, EnsembleSpec, beam_decode, gumbel_argmax, single_model_spec
from docmt.markup import failsafe_merge, mark_up, mark_up_parallel, strip_markup
from docmt.model import (
    TrainConfig,
    TransformerConfig,
    glorot_std,
    init_params,
    make_batch,
    train,
)
from docmt.model.transformer import forward_loss, mlm_loss_sum, translation_loss_sum
from docmt.subword import BEG, BRK, CNT, END, decode, encode, train_subwords
from docmt.toy import (
    backtranslation_experiment,
    context_sensitivity_experiment,
    finetune_experiment,
    second_pass_experiment,
    single_threaded,
)
from tests.test_bleu import brute_force_bleu

RESULTS: dict = {}


def _get(name, fn):
    if name not in RESULTS:
        RESULTS[name] = fn()
    return RESULTS[name]


def _report(criterion, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")


# -- criterion 1: invariant suite ----------------------------------------------

def _c1_round_trips(tmp_path, rng):
    words = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "<SEP>", "x1"]
    docs = []
    for i in range(1000):
        sents = []
        for _ in range(int(rng.integers(1, 6))):
            text = " ".join(rng.choice(words, size=int(rng.integers(1, 9))))
            sents.append(Sentence(escape_markup(text)))
        docs.append(Document(tuple(sents), Origin.UNKNOWN, f"r.txt#{i}"))
    corpus = Corpus(tuple(docs), "monolingual")
    path = str(tmp_path / "r.txt")
    write_documents(corpus, path)
    assert load_documents(path) == corpus

    texts = [s.text for d in docs for s in d.sentences]
    alphabet = {c for t in texts for w in t.split() for c in w}
    vocab = train_subwords(texts, 9 + len(alphabet) + 1 + 20)
    for doc in docs:
        for s in doc.sentences:
            assert decode(vocab, encode(vocab, s.text)) == " ".join(s.text.split())

    for doc in docs:
        longest = max(len(encode(vocab, s.text)) for s in doc.sentences)
        limit = longest + 4 + int(rng.integers(0, 40))
        seqs, _ = mark_up(doc, vocab, limit)
        got = [s.text for seq in seqs for s in strip_markup(seq, vocab)]
        assert got == [s.text for s in doc.sentences]
        openers = [s.ids[0] for s in seqs]
        closers = [s.ids[-1] for s in seqs]
        assert openers == [BEG] + [CNT] * (len(seqs) - 1)
        assert closers == [BRK] * (len(seqs) - 1) + [END]
        assert sum(1 for s in seqs if s.ids[-1] == BRK) == \
            sum(1 for s in seqs if s.ids[0] == CNT)
        for s in seqs:
            if s.sentence_count >= 2:
                assert len(s.ids) <= limit
    return vocab


def _c1_parallel_consistency(vocab, rng):
    words = ["alpha", "beta", "gamma", "delta"]
    for _ in range(200):
        n = int(rng.integers(1, 9))
        src = [" ".join(rng.choice(words, size=int(rng.integers(1, 10))))
               for _ in range(n)]
        tgt = [" ".join(rng.choice(words, size=int(rng.integers(1, 10))))
               for _ in range(n)]
        pdoc = ParallelDocument(
            Document(tuple(Sentence(t) for t in src), Origin.UNKNOWN, "p"),
            Document(tuple(Sentence(t) for t in tgt), Origin.UNKNOWN, "p"))
        pairs, _ = mark_up_parallel(pdoc, vocab, 60)
        assert len({len(pairs)}) == 1
        assert [a.sentence_count for a, _ in pairs] == \
            [b.sentence_count for _, b in pairs]
        total = sum(a.sentence_count for a, _ in pairs)
        assert total == n


def _c1_failsafe_shape(rng):
    for _ in range(300):
        def sents(k):
            return [Sentence(" ".join(["w"] * int(rng.integers(1, 12))))
                    for _ in range(k)]
        doc_out = sents(int(rng.integers(0, 9)))
        template = sents(int(rng.integers(1, 9)))
        assert len(failsafe_merge(doc_out, template)) == len(template)


def _c1_augmentation(rng):
    for trial in range(100):
        n = int(rng.integers(1, 30))
        doc_id = f"d{trial}"
        src = Document(tuple(Sentence(f"s{i}") for i in range(n)),
                       Origin.UNKNOWN, doc_id)
        tgt = Document(tuple(Sentence(f"t{i}") for i in range(n)),
                       Origin.UNKNOWN, doc_id)
        pdoc = ParallelDocument(src, tgt)
        subs = sample_subdocuments(pdoc, 10, rng_seed=trial)
        assert len(subs) == min(10, n * (n + 1) // 2 - 1)
        seen = set()
        for sub in subs:
            assert 1 <= len(sub) < n or n == 1
            first = int(sub.src.sentences[0].text[1:])
            span = (first, len(sub))
            assert span not in seen
            seen.add(span)

    pairs = [(f"a{i}", f"b{i}") for i in range(500)]
    fake = make_fake_documents(pairs, lambda r: int(r.integers(1, 9)), 3)
    rebuilt = [(a.text, b.text) for d in fake.documents
               for a, b in zip(d.src.sentences, d.tgt.sentences)]
    assert rebuilt == pairs

    base = Corpus(tuple(
        ParallelDocument(
            Document((Sentence(f"s{i}"),), Origin.UNKNOWN, f"u{i}"),
            Document((Sentence(f"t{i}"),), Origin.UNKNOWN, f"u{i}"))
        for i in range(10)), "parallel")
    grown = upsample(base, 37, rng_seed=5)
    from collections import Counter
    per_doc = Counter(d.id.split("@")[0] for d in grown.documents)
    assert all(v >= 3 for v in per_doc.values())


def _c1_init_scaling():
    config = TransformerConfig(vocab_size=64, depth=12, model_dim=512,
                               ff_dim=512, heads=8, dtype="float64")
    params = init_params(config, seed=0)
    for i in (1, 4, 12):
        w = params[f"enc.{i}.att.wq"]
        assert w.size >= 10_000
        expected = glorot_std(512, 512) / math.sqrt(i)
        assert abs(np.std(w) - expected) / expected < 0.05
    ratio = np.std(params["dec.12.self.wq"]) / np.std(params["dec.3.self.wq"])
    assert abs(ratio - 0.5) / 0.5 < 0.05


def _c1_loss_additivity(rng):
    config = TransformerConfig(vocab_size=40, depth=2, model_dim=16, ff_dim=32,
                               heads=2, max_len=32, dtype="float64",
                               masked_lm=True)
    params = init_params(config, seed=1)
    batch = make_batch([[9, 10, 11]], [[12, 13]])
    mono = make_batch([[14, 15, 16, 17]], [[9]])
    breakdown, _ = forward_loss(params, config, batch, mono_ids=mono.src,
                                mono_len=mono.src_len,
                                rng=np.random.default_rng(0))
    assert breakdown.total == breakdown.ce + config.mlm_weight * breakdown.mlm


def _c1_sgd_delay(rng):
    config = TransformerConfig(vocab_size=24, depth=2, model_dim=16, ff_dim=32,
                               heads=2, max_len=32, dtype="float64")
    seqs = [[int(x) for x in rng.integers(9, 24, size=4)] for _ in range(8)]
    micro = [make_batch([s], [s]) for s in seqs]
    concat = make_batch(seqs, seqs)
    params0 = init_params(config, seed=2)
    tc = TrainConfig(batch_tokens=256, max_len=32, optimizer="sgd", lr=0.05,
                     warmup_steps=0, optimizer_delay=8, max_updates=1, seed=0)
    delayed = train(params0, config, tc, iter(micro))
    tc1 = TrainConfig(batch_tokens=256, max_len=32, optimizer="sgd", lr=0.05,
                      warmup_steps=0, optimizer_delay=1, max_updates=1, seed=0)
    fused = train(params0, config, tc1, iter([concat]))
    for name in params0:
        np.testing.assert_allclose(delayed.params[name], fused.params[name],
                                   rtol=1e-9, atol=1e-12)


def _c1_gradient_checks(rng):
    config = TransformerConfig(vocab_size=32, depth=2, model_dim=16, ff_dim=24,
                               heads=2, max_len=32, dtype="float64",
                               masked_lm=True, dual_encoder=True)
    params = init_params(config, seed=3)
    batch = make_batch([[9, 10, 11]], [[12, 13, 14]], [[15, 16]])
    mono = make_batch([[17, 18, 19, 20, 21]], [[9]])
    from docmt.model.transformer import sample_mask_positions
    positions = sample_mask_positions(config, mono.src, mono.src_len,
                                      np.random.default_rng(1))

    def loss(want):
        ce, n_ce, g_ce = translation_loss_sum(params, config, batch, want)
        ml, n_ml, g_ml, _ = mlm_loss_sum(params, config, mono.src,
                                         mono.src_len,
                                         mask_positions=positions,
                                         want_grads=want)
        total = ce / n_ce + config.mlm_weight * ml / n_ml
        if not want:
            return total
        grads = {k: v / n_ce for k, v in g_ce.items()}
        for k, v in g_ml.items():
            grads[k] = grads.get(k, 0.0) + config.mlm_weight * v / n_ml
        return grads

    grads = loss(True)
    names = sorted(grads)
    eps = 1e-5
    for probe in range(20):
        name = names[int(rng.integers(len(names)))]
        flat = params[name].reshape(-1)
        idx = int(rng.integers(flat.size))
        old = flat[idx]
        flat[idx] = old + eps
        hi = loss(False)
        flat[idx] = old - eps
        lo = loss(False)
        flat[idx] = old
        fd = (hi - lo) / (2 * eps)
        g = grads[name].reshape(-1)[idx]
        denom = max(abs(fd), abs(g), 1e-6)
        assert abs(fd - g) / denom < 1e-3, f"{name}[{idx}]"


def _c1_ensemble(rng):
    config = TransformerConfig(vocab_size=14, depth=2, model_dim=16, ff_dim=24,
                               heads=2, max_len=64, dtype="float64")
    params_a = init_params(config, seed=4)
    params_b = init_params(config, seed=5)
    dconf = DecodeConfig(mode="beam", beam_size=3, max_out_len=8)
    single = beam_decode(single_model_spec(params_a, config), dconf, [9, 10])
    collapse = beam_decode(
        EnsembleSpec(((params_a, config),) * 3, (0.2, 1.0, 2.5)), dconf, [9, 10])
    assert collapse.ids == single.ids
    assert collapse.score == pytest.approx(single.score, rel=1e-12)
    both1 = beam_decode(
        EnsembleSpec(((params_a, config), (params_b, config)), (0.3, 1.0)),
        dconf, [9, 10])
    both2 = beam_decode(
        EnsembleSpec(((params_a, config), (params_b, config)), (3.0, 10.0)),
        dconf, [9, 10])
    assert both1.ids == both2.ids
    assert both1.score == pytest.approx(both2.score, rel=1e-12)


def _c1_sampling_tv():
    logits = np.array([1.3, 0.2, -0.8])
    probs = np.exp(logits) / np.exp(logits).sum()
    rng = np.random.default_rng(12345)
    draws = 100_000
    counts = np.zeros(3)
    for _ in range(draws):
        counts[gumbel_argmax(logits, 1.0, rng)] += 1
    tv = 0.5 * np.abs(counts / draws - probs).sum()
    assert tv < 0.01, f"TV {tv:.4f}"


def _c1_bleu_oracle(rng):
    words = ["the", "cat", "sat", "on", "a", "mat", "ran", "4.5", "x-1"]
    for _ in range(20):
        hyps = [" ".join(rng.choice(words, size=int(rng.integers(1, 15))))
                for _ in range(100)]
        refs = [" ".join(rng.choice(words, size=int(rng.integers(1, 15))))
                for _ in range(100)]
        assert bleu(hyps, refs).score == pytest.approx(
            brute_force_bleu(hyps, refs), abs=1e-6)


def test_criterion_1_invariant_suite(tmp_path):
    started = time.time()
    rng = np.random.default_rng(1009)
    with single_threaded():
        vocab = _c1_round_trips(tmp_path, rng)
        _c1_parallel_consistency(vocab, rng)
        _c1_failsafe_shape(rng)
        _c1_augmentation(rng)
        _c1_init_scaling()
        _c1_loss_additivity(rng)
        _c1_sgd_delay(rng)
        _c1_gradient_checks(rng)
        _c1_ensemble(rng)
        _c1_sampling_tv()
        _c1_bleu_oracle(rng)
    elapsed = time.time() - started
    ok = elapsed < 900
    _report(1, ok, f"invariant suite green in {elapsed:.0f}s (budget 900s)")
    assert ok


# -- criterion 2: context sensitivity -------------------------------------------

def test_criterion_2_context_sensitivity():
    started = time.time()
    metrics = _get("context", lambda: context_sensitivity_experiment(seed=11))
    elapsed = time.time() - started
    ok = (metrics["doc_accuracy"] > 0.95
          and 0.45 <= metrics["sent_accuracy"] <= 0.55
          and elapsed < 3600)
    _report(2, ok, f"doc accuracy {metrics['doc_accuracy']:.3f} (> 0.95), "
                   f"sentence accuracy {metrics['sent_accuracy']:.3f} "
                   f"(in [0.45, 0.55]), {elapsed:.0f}s (budget 3600s)")
    assert metrics["doc_accuracy"] > 0.95
    assert 0.45 <= metrics["sent_accuracy"] <= 0.55
    assert elapsed < 3600


# -- criterion 3: fine-tuning ----------------------------------------------------

def test_criterion_3_fine_tuning():
    started = time.time()
    metrics = _get("finetune", lambda: finetune_experiment(seed=21))
    elapsed = time.time() - started
    ok = metrics["improvement"] >= 1.0 and elapsed < 1800
    _report(3, ok, f"clean-origin dev BLEU {metrics['clean_split_before']:.2f}"
                   f" -> {metrics['clean_split_after']:.2f} "
                   f"(+{metrics['improvement']:.2f} >= 1), "
                   f"{elapsed:.0f}s (budget 1800s)")
    assert metrics["improvement"] >= 1.0
    assert elapsed < 1800


# -- criterion 4: back-translation round trip ------------------------------------

def test_criterion_4_backtranslation_round_trip():
    started = time.time()
    metrics = _get("backtranslation",
                   lambda: backtranslation_experiment(seed=31))
    elapsed = time.time() - started
    ok = (metrics["bleu"] >= 90.0 and metrics["boundary_mismatches"] == 0
          and metrics["output_count_mismatches"] == 0
          and metrics["bt_documents"] == 1000 and elapsed < 2700)
    _report(4, ok, f"forward BLEU {metrics['bleu']:.2f} (>= 90), boundary "
                   f"mismatches {metrics['boundary_mismatches']}/1000 (== 0), "
                   f"{elapsed:.0f}s (budget 2700s)")
    assert metrics["bt_documents"] == 1000
    assert metrics["boundary_mismatches"] == 0
    assert metrics["output_count_mismatches"] == 0
    assert metrics["bleu"] >= 90.0
    assert elapsed < 2700


# -- criterion 5: second-pass sanity --------------------------------------------

def test_criterion_5_second_pass():
    started = time.time()
    metrics = _get("second_pass", lambda: second_pass_experiment(seed=41))
    elapsed = time.time() - started
    ok = (metrics["correction_rate"] >= 0.90
          and metrics["sentence_count_changes"] == 0 and elapsed < 1800)
    _report(5, ok, f"corrected {metrics['errors_corrected']}/"
                   f"{metrics['errors_injected']} injected errors "
                   f"({metrics['correction_rate']:.3f} >= 0.90), count changes "
                   f"{metrics['sentence_count_changes']} (== 0), "
                   f"{elapsed:.0f}s (budget 1800s)")
    assert metrics["correction_rate"] >= 0.90
    assert metrics["sentence_count_changes"] == 0
    assert elapsed < 1800


# -- criterion 6: masked-LM co-training ------------------------------------------

def test_criterion_6_masked_lm_cotraining():
    started = time.time()
    base = _get("context", lambda: context_sensitivity_experiment(seed=11))
    metrics = _get("context_mlm",
                   lambda: context_sensitivity_experiment(seed=11,
                                                          with_mlm=True))
    elapsed = time.time() - started

    # shape contracts: the masked-LM variant only adds the mlm head
    config = TransformerConfig(vocab_size=40, depth=2, model_dim=16, ff_dim=32,
                               heads=2, max_len=32)
    base_names = set(init_params(config, 0))
    mlm_names = set(init_params(
        TransformerConfig(vocab_size=40, depth=2, model_dim=16, ff_dim=32,
                          heads=2, max_len=32, masked_lm=True), 0))
    only_extra_head = (base_names < mlm_names
                       and all(n.startswith("mlm.")
                               for n in mlm_names - base_names))

    drift = abs(metrics["doc_accuracy"] - base["doc_accuracy"])
    ok = (metrics["mlm_drop"] >= 0.5 and drift <= 0.02 and only_extra_head
          and elapsed < 3600)
    _report(6, ok, f"mlm loss fell {100 * metrics['mlm_drop']:.0f}% (>= 50%), "
                   f"accuracy drift {drift:.3f} (<= 0.02), extra params are "
                   f"the mlm head only: {only_extra_head}, {elapsed:.0f}s "
                   f"(budget 3600s)")
    assert only_extra_head
    assert metrics["mlm_drop"] >= 0.5
    assert drift <= 0.02
    assert elapsed < 3600


# -- criterion 7: deterministic reproducibility ----------------------------------

def test_criterion_7_deterministic_reruns():
    experiments = {
        "context": lambda: context_sensitivity_experiment(seed=11),
        "finetune": lambda: finetune_experiment(seed=21),
        "backtranslation": lambda: backtranslation_experiment(seed=31),
        "second_pass": lambda: second_pass_experiment(seed=41),
        "context_mlm": lambda: context_sensitivity_experiment(seed=11,
                                                              with_mlm=True),
    }
    mismatches = []
    for name, fn in experiments.items():
        first = _get(name, fn)
        again = fn()
        if first != again:
            mismatches.append((name, first, again))
    ok = not mismatches
    _report(7, ok, "all experiment metrics identical across reruns" if ok
            else f"mismatches in {[m[0] for m in mismatches]}")
    assert not mismatches, mismatches
