"""Byte-pair subword vocabulary shared across both languages.

Merges are learned over whitespace-pretokenized text with a "▁" word-boundary
marker; ids 0..8 are reserved for mark-up and control symbols and are never
produced by encoding escaped text (except <UNK> for unseen characters).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from . import kernels
from .corpus import Corpus, flatten_pairs, flatten_sentences
from .errors import IdOutOfRange, VocabTooSmall

SPECIALS = ("<BEG>", "<SEP>", "<END>", "<BRK>", "<CNT>",
            "<MASK>", "<PAD>", "<UNK>", "<EOS>")
BEG, SEP, END, BRK, CNT, MASK, PAD, UNK, EOS = range(9)
N_SPECIALS = len(SPECIALS)

WORD_MARK = "▁"  # prefixes word-initial pieces


@dataclass
class SubwordVocab:
    merges: tuple[tuple[str, str], ...]
    token_to_id: dict[str, int]
    alphabet: tuple[str, ...]

    def __post_init__(self):
        self.id_to_token = [""] * len(self.token_to_id)
        for tok, i in self.token_to_id.items():
            self.id_to_token[i] = tok
        self._merge_tables = None

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def specials(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(SPECIALS)}

    def _tables(self):
        """Merge lookup tables for the encode kernel (built lazily)."""
        if self._merge_tables is None:
            keys, ranks, new_ids = [], [], []
            for rank, (left, right) in enumerate(self.merges):
                keys.append(kernels.pack_pair(
                    self.token_to_id[left], self.token_to_id[right]))
                ranks.append(rank)
                new_ids.append(self.token_to_id[left + right])
            keys = np.asarray(keys, dtype=np.int64)
            order = np.argsort(keys)
            self._merge_tables = (
                keys[order],
                np.asarray(ranks, dtype=np.int64)[order],
                np.asarray(new_ids, dtype=np.int32)[order],
            )
        return self._merge_tables


def _training_texts(corpus: Union[Corpus, Iterable[str]]) -> list[str]:
    if isinstance(corpus, Corpus):
        if corpus.kind == "parallel":
            return [t for pair in flatten_pairs(corpus) for t in pair]
        return flatten_sentences(corpus)
    return list(corpus)


def train_subwords(corpus: Union[Corpus, Iterable[str]], vocab_size: int) -> SubwordVocab:
    """Learn a byte-pair vocabulary of exactly vocab_size entries.

    Entries are specials (9) + character alphabet + merge products. Equal
    frequency ties break on the lexicographically smallest (left, right) pair
    so training is deterministic across platforms.
    """
    texts = _training_texts(corpus)
    word_freq = Counter()
    for text in texts:
        word_freq.update(text.split())

    alphabet = sorted({c for w in word_freq for c in w} | {WORD_MARK})
    floor = N_SPECIALS + len(alphabet)
    if vocab_size <= floor:
        raise VocabTooSmall(
            f"vocab_size {vocab_size} <= specials+alphabet ({floor})")

    token_to_id = {s: i for i, s in enumerate(SPECIALS)}
    for ch in alphabet:
        token_to_id[ch] = len(token_to_id)

    words = sorted(word_freq)  # fixed order; counting is order-independent
    syms_list, freqs = [], []
    for w in words:
        syms_list.append([token_to_id[WORD_MARK]] + [token_to_id[c] for c in w])
        freqs.append(word_freq[w])
    flat = np.asarray([s for ws in syms_list for s in ws], dtype=np.int32)
    offsets = np.zeros(len(words) + 1, dtype=np.int64)
    np.cumsum([len(ws) for ws in syms_list], out=offsets[1:])
    freqs = np.asarray(freqs, dtype=np.int64)

    id_to_token = [""] * len(token_to_id)
    for tok, i in token_to_id.items():
        id_to_token[i] = tok

    merges: list[tuple[str, str]] = []
    while len(token_to_id) < vocab_size:
        keys, counts = kernels.count_pairs(flat, offsets, freqs)
        if keys.shape[0] == 0:
            raise VocabTooSmall(
                f"corpus exhausted at {len(token_to_id)} entries; "
                f"requested {vocab_size}")
        top = counts.max()
        best = None
        for key in keys[counts == top]:
            left_id = int(key) >> 32
            right_id = int(key) & 0xFFFFFFFF
            pair = (id_to_token[left_id], id_to_token[right_id])
            if best is None or pair < best[0]:
                best = (pair, left_id, right_id)
        (left, right), left_id, right_id = best
        new_tok = left + right
        if new_tok in token_to_id:
            new_id = token_to_id[new_tok]
        else:
            new_id = len(token_to_id)
            token_to_id[new_tok] = new_id
            id_to_token.append(new_tok)
        merges.append((left, right))
        flat, offsets = kernels.apply_merge(
            flat, offsets, np.int32(left_id), np.int32(right_id), np.int32(new_id))

    return SubwordVocab(tuple(merges), token_to_id, tuple(alphabet))


def encode(vocab: SubwordVocab, text: str) -> list[int]:
    """Tokenize text into subword ids; unseen characters map to <UNK>."""
    out: list[int] = []
    keys, ranks, new_ids = vocab._tables()
    mark = vocab.token_to_id[WORD_MARK]
    for word in text.split():
        syms = np.asarray(
            [mark] + [vocab.token_to_id.get(c, UNK) for c in word],
            dtype=np.int32)
        out.extend(int(i) for i in kernels.encode_word(syms, keys, ranks, new_ids))
    return out


def decode(vocab: SubwordVocab, ids: Iterable[int]) -> str:
    """Inverse of encode up to whitespace normalization.

    Special ids render as their literal symbol strings, which reproduces the
    mark-up spacing (no space before "<SEP>", a space after "<BEG>").
    """
    pieces = []
    size = len(vocab)
    for i in ids:
        i = int(i)
        if i < 0 or i >= size:
            raise IdOutOfRange(f"id {i} not in [0, {size})")
        pieces.append(vocab.id_to_token[i])
    return "".join(pieces).replace(WORD_MARK, " ").strip()


def save_vocab(vocab: SubwordVocab, path: str) -> None:
    """Vocabulary file: "version 1", specials, alphabet, then merges as TSV."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("version 1\n")
        for s in SPECIALS:
            fh.write(s + "\n")
        for ch in vocab.alphabet:
            fh.write(ch + "\n")
        for left, right in vocab.merges:
            fh.write(f"{left}\t{right}\n")


def load_vocab(path: str) -> SubwordVocab:
    with open(path, encoding="utf-8", newline="\n") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != "version 1":
        raise VocabTooSmall(f"{path}: missing 'version 1' header")
    body = lines[1:]
    if body[:N_SPECIALS] != list(SPECIALS):
        raise VocabTooSmall(f"{path}: specials block is corrupt")
    token_to_id = {s: i for i, s in enumerate(SPECIALS)}
    alphabet = []
    merges = []
    for line in body[N_SPECIALS:]:
        if "\t" in line:
            left, right = line.split("\t")
            merges.append((left, right))
        else:
            alphabet.append(line)
            token_to_id[line] = len(token_to_id)
    for left, right in merges:
        tok = left + right
        if tok not in token_to_id:
            token_to_id[tok] = len(token_to_id)
    return SubwordVocab(tuple(merges), token_to_id, tuple(alphabet))
