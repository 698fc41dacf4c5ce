import itertools

import numpy as np
import pytest

from docmt.corpus import Document, Origin, ParallelDocument, Sentence
from docmt.errors import MalformedMarkup
from docmt.markup import (
    Alignment,
    MarkedSequence,
    align_sentences,
    failsafe_merge,
    loose_sentences,
    mark_up,
    mark_up_parallel,
    parse_marked,
    parse_marked_text,
    render_marked,
    strip_markup,
)
from docmt.subword import BEG, BRK, CNT, END, SEP, encode, train_subwords

VOCAB_TEXTS = ["all the small words here go to one tiny pool of text",
               "more words make merges for the pool"]


@pytest.fixture(scope="module")
def vocab():
    return train_subwords(VOCAB_TEXTS, 60)


def _doc(texts, doc_id="d"):
    return Document(tuple(Sentence(t) for t in texts), Origin.UNKNOWN, doc_id)


def greedy_packing_oracle(costs, limit):
    """Independent greedy packer: chunk sentence counts under the limit."""
    sizes = []
    cur_n, cur_len = 0, 2
    for c in costs:
        if cur_n and cur_len + c > limit:
            sizes.append(cur_n)
            cur_n, cur_len = 0, 2
        cur_n += 1
        cur_len += c
    sizes.append(cur_n)
    return sizes


def test_short_document_single_sequence(vocab):
    doc = _doc(["the small words", "one tiny pool", "more words"])
    seqs, warnings = mark_up(doc, vocab, limit=1000)
    assert warnings == []
    assert len(seqs) == 1
    seq = seqs[0]
    assert seq.ids[0] == BEG and seq.ids[-1] == END
    assert seq.sentence_count == 3
    # <SEP> terminates every sentence including the last
    assert seq.ids[-2] == SEP


def test_single_sentence_document(vocab):
    doc = _doc(["one word"])
    seqs, _ = mark_up(doc, vocab, limit=1000)
    ids = seqs[0].ids
    assert ids[0] == BEG and ids[-1] == END and ids[-2] == SEP
    assert seqs[0].sentence_count == 1


def test_greedy_packing_matches_oracle(vocab):
    rng = np.random.default_rng(5)
    words = ["the", "small", "words", "pool", "tiny"]
    sents = [" ".join(rng.choice(words, size=30)) for _ in range(40)]
    doc = _doc(sents)
    limit = 1000
    costs = [len(encode(vocab, t)) + 1 for t in sents]
    expected = greedy_packing_oracle(costs, limit)
    seqs, warnings = mark_up(doc, vocab, limit=limit)
    assert warnings == []
    assert [s.sentence_count for s in seqs] == expected
    for s in seqs:
        assert len(s.ids) <= limit
    assert seqs[0].ids[0] == BEG and seqs[-1].ids[-1] == END
    for s in seqs[1:]:
        assert s.ids[0] == CNT
    for s in seqs[:-1]:
        assert s.ids[-1] == BRK


def test_overlong_single_sentence_warned_not_truncated(vocab):
    doc = _doc(["word " * 50, "tiny"])
    seqs, warnings = mark_up(doc, vocab, limit=20)
    assert len(warnings) == 1
    assert len(seqs[0].ids) > 20
    round_trip = [s.text for seq in seqs for s in strip_markup(seq, vocab)]
    assert round_trip == [" ".join(t.split()) for t in doc.texts()]


def test_round_trip_random_documents(vocab):
    rng = np.random.default_rng(9)
    words = ["all", "the", "small", "words", "here", "go", "pool"]
    for _ in range(50):
        sents = [" ".join(rng.choice(words, size=int(rng.integers(1, 12))))
                 for _ in range(int(rng.integers(1, 15)))]
        doc = _doc(sents)
        longest = max(len(encode(vocab, t)) for t in sents)
        limit = int(rng.integers(longest + 4, longest + 40))
        seqs, _ = mark_up(doc, vocab, limit=limit)
        got = [s.text for seq in seqs for s in strip_markup(seq, vocab)]
        assert got == sents
        opens = [s.ids[0] for s in seqs]
        closes = [s.ids[-1] for s in seqs]
        assert opens == [BEG] + [CNT] * (len(seqs) - 1)
        assert closes == [BRK] * (len(seqs) - 1) + [END]
        for s in seqs:
            if s.sentence_count >= 2:
                assert len(s.ids) <= limit


def test_parallel_consistent_breaks(vocab):
    rng = np.random.default_rng(13)
    words = ["all", "the", "small", "words", "pool"]
    for _ in range(25):
        n = int(rng.integers(1, 12))
        src_sents = [" ".join(rng.choice(words, size=int(rng.integers(6, 14))))
                     for _ in range(n)]
        tgt_sents = [" ".join(rng.choice(words, size=int(rng.integers(1, 6))))
                     for _ in range(n)]
        pdoc = ParallelDocument(_doc(src_sents, "s"), _doc(tgt_sents, "s"))
        pairs, _ = mark_up_parallel(pdoc, vocab, limit=60)
        assert [a.sentence_count for a, b in pairs] == \
            [b.sentence_count for a, b in pairs]
        src_round = [s.text for a, _ in pairs for s in strip_markup(a, vocab)]
        tgt_round = [s.text for _, b in pairs for s in strip_markup(b, vocab)]
        assert src_round == src_sents and tgt_round == tgt_sents
        # breaks dictated by the longer side: each side fits or is a lone sentence
        for a, b in pairs:
            if a.sentence_count >= 2:
                assert len(a.ids) <= 60 and len(b.ids) <= 60


def test_joint_packing_count_vs_per_side(vocab):
    # one side alone packs into fewer chunks than the joint packing
    src_sents = ["all the small words here go to one", "more words make merges",
                 "the pool of text words go here"]
    tgt_sents = ["tiny", "tiny", "tiny"]
    pdoc = ParallelDocument(_doc(src_sents, "x"), _doc(tgt_sents, "x"))
    src_costs = [len(encode(vocab, t)) + 1 for t in src_sents]
    tgt_costs = [len(encode(vocab, t)) + 1 for t in tgt_sents]
    limit = 2 + max(src_costs) + 1
    joint_oracle = greedy_packing_oracle([max(a, b) for a, b in zip(src_costs, tgt_costs)],
                                         limit)
    tgt_alone = greedy_packing_oracle(tgt_costs, limit)
    assert len(tgt_alone) < len(joint_oracle)
    pairs, _ = mark_up_parallel(pdoc, vocab, limit=limit)
    assert len(pairs) == len(joint_oracle)
    assert [a.sentence_count for a, _ in pairs] == joint_oracle


def test_strip_markup_requires_closer(vocab):
    doc = _doc(["the small words"])
    seq, _ = mark_up(doc, vocab)
    broken = list(seq[0].ids)[:-1]
    with pytest.raises(MalformedMarkup):
        parse_marked(broken)


def test_strip_markup_rejects_empty_segment(vocab):
    ids = [BEG, SEP, SEP, END]
    with pytest.raises(MalformedMarkup):
        parse_marked(ids)


def test_separator_count_gives_sentence_count(vocab):
    rng = np.random.default_rng(3)
    words = ["the", "small", "words", "go", "here"]
    for k in range(1, 6):
        ids = [BEG]
        for _ in range(k):
            text = " ".join(rng.choice(words, size=int(rng.integers(1, 4))))
            ids.extend(encode(vocab, text))
            ids.append(SEP)
        ids.append(END)
        seq = parse_marked(ids)
        assert seq.sentence_count == k
        assert len(strip_markup(seq, vocab)) == k


def test_render_and_parse_marked_text(vocab):
    doc = _doc(["the small words", "more words"])
    seqs, _ = mark_up(doc, vocab)
    line = render_marked(seqs[0], vocab)
    assert line.startswith("<BEG> ")
    assert "<SEP><END>" in line
    assert " <SEP>" not in line
    again = parse_marked_text(line, vocab)
    assert again.ids == seqs[0].ids


def test_loose_sentences_salvages_malformed(vocab):
    content = encode(vocab, "the small words")
    ids = content + [SEP] + encode(vocab, "more words")  # no opener/closer/final SEP
    got = loose_sentences(ids, vocab)
    assert [s.text for s in got] == ["the small words", "more words"]


# --- alignment ---------------------------------------------------------------

MOVES = [(1, 1, 0.0), (1, 0, 4.0), (0, 1, 4.0), (2, 1, 2.0), (1, 2, 2.0)]


def length_cost(la, lb):
    denom = la + lb
    if denom <= 0:
        return 0.0
    return abs(la - lb) / np.sqrt(denom)


def exhaustive_best_alignment(la, lb):
    """Oracle: enumerate every monotone link path (inputs of length <= 6)."""
    best = [np.inf, None]

    def rec(i, j, cost, path):
        if cost >= best[0]:
            return
        if i == len(la) and j == len(lb):
            best[0] = cost
            best[1] = list(path)
            return
        for da, db, pen in MOVES:
            if i + da > len(la) or j + db > len(lb):
                continue
            step = pen + length_cost(sum(la[i:i + da]), sum(lb[j:j + db]))
            path.append(((i, i + da), (j, j + db)))
            rec(i + da, j + db, cost + step, path)
            path.pop()

    rec(0, 0, 0.0, [])
    return best[0], best[1]


def _sents(lengths):
    return [Sentence(" ".join(["w"] * n)) for n in lengths]


def test_equal_lists_align_one_to_one():
    a = _sents([5, 7, 3])
    b = _sents([5, 8, 3])
    alignment = align_sentences(a, b)
    assert alignment.one_to_one() == [(0, 0), (1, 1), (2, 2)]


def test_single_pair():
    alignment = align_sentences(_sents([4]), _sents([5]))
    assert alignment.links == (((0, 1), (0, 1)),)


def test_alignment_matches_exhaustive_oracle():
    rng = np.random.default_rng(21)
    for _ in range(40):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(max(1, n - 2), n + 2))
        la = [int(x) for x in rng.integers(1, 20, size=n)]
        lb = [int(x) for x in rng.integers(1, 20, size=m)]
        _, oracle_path = exhaustive_best_alignment(la, lb)
        got = align_sentences(_sents(la), _sents(lb))
        oracle_cost, _ = exhaustive_best_alignment(la, lb)
        got_cost = 0.0
        for (sa, ea), (sb, eb) in got.links:
            pen = {(1, 1): 0.0, (1, 0): 4.0, (0, 1): 4.0, (2, 1): 2.0, (1, 2): 2.0}[
                (ea - sa, eb - sb)]
            got_cost += pen + length_cost(sum(la[sa:ea]), sum(lb[sb:eb]))
        assert got_cost == pytest.approx(oracle_cost, abs=1e-9)


def test_extra_short_sentence_single_non_one_to_one():
    a = _sents([10, 1, 12, 9])
    b = _sents([10, 12, 9])
    alignment = align_sentences(a, b)
    non11 = [l for l in alignment.links
             if (l[0][1] - l[0][0], l[1][1] - l[1][0]) != (1, 1)]
    assert len(non11) == 1


def test_alignment_spans_partition_both_sides():
    rng = np.random.default_rng(2)
    for _ in range(20):
        la = [int(x) for x in rng.integers(1, 15, size=int(rng.integers(1, 9)))]
        lb = [int(x) for x in rng.integers(1, 15, size=int(rng.integers(1, 9)))]
        links = align_sentences(_sents(la), _sents(lb)).links
        pos_a, pos_b = 0, 0
        for (sa, ea), (sb, eb) in links:
            assert sa == pos_a and sb == pos_b
            assert (ea - sa, eb - sb) in {(1, 1), (1, 0), (0, 1), (2, 1), (1, 2)}
            pos_a, pos_b = ea, eb
        assert pos_a == len(la) and pos_b == len(lb)


# --- fail-safe ----------------------------------------------------------------

def test_failsafe_equal_counts_takes_doc_output():
    doc_out = _sents([5, 6, 7])
    template = _sents([5, 6, 7])
    merged = failsafe_merge(doc_out, template)
    assert merged == doc_out


def test_failsafe_empty_doc_out_returns_template():
    template = _sents([4, 4])
    assert failsafe_merge([], template) == template


def test_failsafe_merged_sentence_keeps_template_there():
    # doc_out merged sentences 1+2 into one long sentence (2-1 link on template)
    doc_out = [Sentence("a a a a a a a a a a"), Sentence("b b b b b b b b b b " * 2)]
    template = [Sentence("x x x x x x x x x x"), Sentence("y " * 9), Sentence("z " * 9)]
    merged = failsafe_merge(doc_out, template)
    assert len(merged) == len(template)
    alignment = align_sentences(doc_out, template)
    one = alignment.one_to_one()
    for i, j in one:
        assert merged[j] == doc_out[i]
    covered = {j for _, j in one}
    for j in range(len(template)):
        if j not in covered:
            assert merged[j] == template[j]


def test_failsafe_output_length_property():
    rng = np.random.default_rng(17)
    for _ in range(30):
        doc_out = _sents([int(x) for x in rng.integers(1, 12, size=int(rng.integers(1, 8)))])
        template = _sents([int(x) for x in rng.integers(1, 12, size=int(rng.integers(1, 8)))])
        assert len(failsafe_merge(doc_out, template)) == len(template)
