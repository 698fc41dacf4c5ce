"""Document mark-up: long-sequence representation and its inverse.

Documents become single token sequences carrying <BEG>/<SEP>/<END> symbols;
sequences over the length cap are broken greedily with <BRK>/<CNT> at chunk
boundaries, consistently across the two sides of a parallel document. The
fail-safe merge grafts document-level output onto a sentence-level template
when the model loses track of sentence boundaries.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import Document, ParallelDocument, Sentence
from .errors import MalformedMarkup
from .subword import BEG, BRK, CNT, END, SEP, N_SPECIALS, SPECIALS, SubwordVocab, decode, encode

DEFAULT_LIMIT = 1000


@dataclass(frozen=True)
class MarkedSequence:
    ids: tuple[int, ...]
    opener: int  # BEG or CNT
    closer: int  # END or BRK
    sentence_count: int

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if self.opener not in (BEG, CNT) or self.closer not in (END, BRK):
            raise MalformedMarkup("opener/closer must be <BEG>/<CNT> and <END>/<BRK>")
        if not self.ids or self.ids[0] != self.opener or self.ids[-1] != self.closer:
            raise MalformedMarkup("ids must start with the opener and end with the closer")
        if sum(1 for i in self.ids if i == SEP) != self.sentence_count:
            raise MalformedMarkup("sentence_count must equal the number of <SEP>")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class Alignment:
    """Monotone link list over sentence indices; spans are half-open."""
    links: tuple[tuple[tuple[int, int], tuple[int, int]], ...]

    def one_to_one(self) -> list[tuple[int, int]]:
        out = []
        for (sa, ea), (sb, eb) in self.links:
            if ea - sa == 1 and eb - sb == 1:
                out.append((sa, sb))
        return out


def _assemble(chunks: list[list[list[int]]]) -> list[MarkedSequence]:
    seqs = []
    last = len(chunks) - 1
    for c, sents in enumerate(chunks):
        opener = BEG if c == 0 else CNT
        closer = END if c == last else BRK
        ids = [opener]
        for sent in sents:
            ids.extend(sent)
            ids.append(SEP)
        ids.append(closer)
        seqs.append(MarkedSequence(tuple(ids), opener, closer, len(sents)))
    return seqs


def _pack_greedy(costs: list[int], limit: int) -> list[list[int]]:
    """Greedy maximal packing of sentence indices; cost includes the <SEP>."""
    chunks: list[list[int]] = []
    cur: list[int] = []
    cur_len = 2  # opener + closer
    for i, cost in enumerate(costs):
        if cur and cur_len + cost > limit:
            chunks.append(cur)
            cur, cur_len = [], 2
        cur.append(i)
        cur_len += cost
    chunks.append(cur)
    return chunks


def mark_up(doc: Document, vocab: SubwordVocab,
            limit: int = DEFAULT_LIMIT) -> tuple[list[MarkedSequence], list[str]]:
    """Convert a document into marked sequences of at most `limit` tokens.

    Every sentence is terminated by <SEP>; the mark-up symbols count toward
    the limit. A single sentence longer than the limit is emitted alone and
    reported in the returned warning list rather than truncated.
    """
    if limit <= 2:
        raise ValueError("limit must exceed the markup overhead of 2")
    sent_ids = [encode(vocab, s.text) for s in doc.sentences]
    costs = [len(ids) + 1 for ids in sent_ids]
    chunks = _pack_greedy(costs, limit)
    warnings = [
        f"document {doc.id!r}: sentence {c[0]} alone exceeds {limit} tokens"
        for c in chunks if len(c) == 1 and 2 + costs[c[0]] > limit
    ]
    seqs = _assemble([[sent_ids[i] for i in c] for c in chunks])
    return seqs, warnings


def mark_up_parallel(
    pdoc: ParallelDocument, vocab: SubwordVocab, limit: int = DEFAULT_LIMIT,
) -> tuple[list[tuple[MarkedSequence, MarkedSequence]], list[str]]:
    """Mark up both sides with shared chunk boundaries.

    A break after sentence j is taken at the largest j for which both sides'
    chunks still fit the limit, so chunk k covers the same sentence index
    range on both sides.
    """
    if limit <= 2:
        raise ValueError("limit must exceed the markup overhead of 2")
    src_ids = [encode(vocab, s.text) for s in pdoc.src.sentences]
    tgt_ids = [encode(vocab, s.text) for s in pdoc.tgt.sentences]
    src_costs = [len(i) + 1 for i in src_ids]
    tgt_costs = [len(i) + 1 for i in tgt_ids]
    joint = [max(a, b) for a, b in zip(src_costs, tgt_costs)]

    chunks: list[list[int]] = []
    cur: list[int] = []
    cur_src = cur_tgt = 2
    for i in range(len(joint)):
        if cur and (cur_src + src_costs[i] > limit or cur_tgt + tgt_costs[i] > limit):
            chunks.append(cur)
            cur, cur_src, cur_tgt = [], 2, 2
        cur.append(i)
        cur_src += src_costs[i]
        cur_tgt += tgt_costs[i]
    chunks.append(cur)

    warnings = [
        f"document {pdoc.id!r}: sentence {c[0]} alone exceeds {limit} tokens"
        for c in chunks
        if len(c) == 1 and (2 + src_costs[c[0]] > limit or 2 + tgt_costs[c[0]] > limit)
    ]
    src_seqs = _assemble([[src_ids[i] for i in c] for c in chunks])
    tgt_seqs = _assemble([[tgt_ids[i] for i in c] for c in chunks])
    return list(zip(src_seqs, tgt_seqs)), warnings


def parse_marked(ids, strict: bool = True) -> MarkedSequence:
    """Build a MarkedSequence from raw ids, validating the mark-up structure."""
    ids = [int(i) for i in ids]
    if not ids or ids[0] not in (BEG, CNT):
        raise MalformedMarkup("missing opener")
    if ids[-1] not in (END, BRK):
        raise MalformedMarkup("missing closer")
    interior = ids[1:-1]
    n_sep = sum(1 for i in interior if i == SEP)
    if n_sep == 0:
        raise MalformedMarkup("no <SEP> symbols")
    if strict:
        seg: list[int] = []
        for tok in interior:
            if tok == SEP:
                if not seg:
                    raise MalformedMarkup("empty segment between separators")
                seg = []
            elif tok < N_SPECIALS:
                raise MalformedMarkup(f"stray special {SPECIALS[tok]} inside sequence")
            else:
                seg.append(tok)
        if seg:
            raise MalformedMarkup("material after the final <SEP>")
    return MarkedSequence(tuple(ids), ids[0], ids[-1], n_sep)


def strip_markup(seq: MarkedSequence, vocab: SubwordVocab) -> list[Sentence]:
    """Split a marked sequence back into decoded sentences."""
    parse_marked(seq.ids, strict=True)  # re-validate; model output may be raw
    sentences = []
    seg: list[int] = []
    for tok in seq.ids[1:-1]:
        if tok == SEP:
            text = decode(vocab, seg)
            if not text:
                raise MalformedMarkup("segment decodes to an empty sentence")
            sentences.append(Sentence(text))
            seg = []
        else:
            seg.append(tok)
    return sentences


def loose_sentences(ids, vocab: SubwordVocab) -> list[Sentence]:
    """Best-effort sentence extraction from malformed model output."""
    sentences = []
    seg: list[int] = []
    for tok in list(ids) + [SEP]:
        if tok == SEP:
            text = decode(vocab, [i for i in seg if i >= N_SPECIALS])
            if text:
                sentences.append(Sentence(text))
            seg = []
        else:
            seg.append(int(tok))
    return sentences


_MARKUP_RE = re.compile("(" + "|".join(re.escape(s) for s in
                                       ("<BEG>", "<SEP>", "<END>", "<BRK>", "<CNT>")) + ")")
_MARKUP_IDS = {"<BEG>": BEG, "<SEP>": SEP, "<END>": END, "<BRK>": BRK, "<CNT>": CNT}


def render_marked(seq: MarkedSequence, vocab: SubwordVocab) -> str:
    """One-line text form with mark-up symbols inline as literal strings."""
    return decode(vocab, seq.ids)


def parse_marked_text(line: str, vocab: SubwordVocab) -> MarkedSequence:
    """Inverse of render_marked for serialized marked corpora."""
    ids: list[int] = []
    for part in _MARKUP_RE.split(line):
        if not part:
            continue
        if part in _MARKUP_IDS:
            ids.append(_MARKUP_IDS[part])
        else:
            ids.extend(encode(vocab, part))
    return parse_marked(ids, strict=True)


def _lengths(sentences, vocab: SubwordVocab | None) -> np.ndarray:
    if vocab is not None:
        return np.asarray(
            [len(encode(vocab, s.text)) for s in sentences], dtype=np.float64)
    return np.asarray([len(s.text.split()) for s in sentences], dtype=np.float64)


def align_sentences(a: list[Sentence], b: list[Sentence],
                    vocab: SubwordVocab | None = None) -> Alignment:
    """Monotone length-based alignment over {1-1, 1-0, 0-1, 2-1, 1-2} links.

    Dynamic program minimizing link penalties plus a length-difference cost
    |len_a - r*len_b| / sqrt(len_a + r*len_b) with the corpus length ratio r
    fixed to 1. Lengths are subword counts when a vocab is given, whitespace
    token counts otherwise.
    """
    if not a or not b:
        raise ValueError("align_sentences needs non-empty inputs")
    la = _lengths(a, vocab)
    lb = _lengths(b, vocab)
    _, back = kernels.align_dp(la, lb, 1.0)
    links = []
    i, j = len(a), len(b)
    while i > 0 or j > 0:
        mv = int(back[i, j])
        if mv < 0:
            raise MalformedMarkup("alignment backtrace failed")
        da, db = int(kernels.ALIGN_MOVES[mv, 0]), int(kernels.ALIGN_MOVES[mv, 1])
        links.append(((i - da, i), (j - db, j)))
        i -= da
        j -= db
    links.reverse()
    return Alignment(tuple(links))


def failsafe_merge(doc_out: list[Sentence], template: list[Sentence],
                   vocab: SubwordVocab | None = None) -> list[Sentence]:
    """Template-preserving merge: 1-1-aligned positions take doc_out text.

    The result always has exactly len(template) sentences; when doc_out is
    empty the template is returned unchanged.
    """
    result = list(template)
    if not doc_out or not template:
        return result
    alignment = align_sentences(doc_out, template, vocab)
    for i, j in alignment.one_to_one():
        result[j] = doc_out[i]
    return result
