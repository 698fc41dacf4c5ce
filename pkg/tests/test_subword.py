from collections import Counter

import numpy as np
import pytest

from docmt.errors import IdOutOfRange, VocabTooSmall
from docmt.subword import (
    EOS,
    N_SPECIALS,
    SEP,
    SPECIALS,
    UNK,
    WORD_MARK,
    decode,
    encode,
    load_vocab,
    save_vocab,
    train_subwords,
)


def brute_force_pair_counts(texts):
    """Oracle: count adjacent symbol pairs over word-marked character words."""
    counts = Counter()
    for text in texts:
        for word in text.split():
            syms = [WORD_MARK] + list(word)
            for a, b in zip(syms, syms[1:]):
                counts[(a, b)] += 1
    return counts


def test_first_merge_is_most_frequent_pair():
    texts = ["aaab aaab"]
    vocab = train_subwords(texts, 9 + 4)
    oracle = brute_force_pair_counts(texts)
    assert max(oracle.items(), key=lambda kv: (kv[1], kv[0]))[0] == ("a", "a")
    assert vocab.merges[0] == ("a", "a")
    assert len(vocab) == 13


def test_vocab_too_small():
    with pytest.raises(VocabTooSmall):
        train_subwords(["abc"], 9 + 4)  # alphabet is {▁,a,b,c} -> floor 13


def test_training_deterministic():
    texts = ["the cat sat on the mat", "the dog ate the cat food"]
    v1 = train_subwords(texts, 40)
    v2 = train_subwords(texts, 40)
    assert v1.merges == v2.merges
    assert v1.token_to_id == v2.token_to_id


def test_ids_dense_and_specials_reserved():
    vocab = train_subwords(["some words and more words"], 30)
    ids = sorted(vocab.token_to_id.values())
    assert ids == list(range(len(vocab)))
    for i, s in enumerate(SPECIALS):
        assert vocab.token_to_id[s] == i


def test_encode_empty():
    vocab = train_subwords(["ab ba"], 14)
    assert encode(vocab, "") == []
    assert decode(vocab, []) == ""


def test_unknown_char_maps_to_unk():
    vocab = train_subwords(["ab ba"], 14)
    ids = encode(vocab, "aZb")
    assert UNK in ids


def test_no_special_ids_from_escaped_text():
    vocab = train_subwords(["a b <SEP> &lt;SEP&gt;"], 34)
    ids = encode(vocab, "a &lt;SEP&gt; b")
    assert all(i >= N_SPECIALS for i in ids)


def test_decode_specials_render_literally():
    vocab = train_subwords(["ab"], 13)
    assert decode(vocab, [SEP]) == "<SEP>"
    assert decode(vocab, [EOS]) == "<EOS>"


def test_decode_id_out_of_range():
    vocab = train_subwords(["ab"], 13)
    with pytest.raises(IdOutOfRange):
        decode(vocab, [len(vocab)])


def _random_sentences(rng, n, alphabet="abcdet lso"):
    out = []
    for _ in range(n):
        n_chars = int(rng.integers(1, 60))
        text = " ".join("".join(rng.choice(list(alphabet), size=n_chars)).split())
        out.append(text or "a")
    return out


def test_round_trip_random_sentences():
    rng = np.random.default_rng(11)
    train = _random_sentences(rng, 200)
    vocab = train_subwords(train, 60)
    held_out = _random_sentences(rng, 300)
    for text in train + held_out:
        norm = " ".join(text.split())
        assert decode(vocab, encode(vocab, text)) == norm


def test_vocab_file_round_trip(tmp_path):
    texts = ["words of a tiny corpus", "tiny corpus of words"]
    vocab = train_subwords(texts, 38)
    path = tmp_path / "vocab.txt"
    save_vocab(vocab, str(path))
    head = path.read_text(encoding="utf-8").split("\n")[:10]
    assert head[0] == "version 1"
    assert head[1:10] == list(SPECIALS)
    again = load_vocab(str(path))
    assert again.merges == vocab.merges
    assert again.token_to_id == vocab.token_to_id
    for text in texts:
        assert encode(again, text) == encode(vocab, text)
