"""Training-data assembly: sub-document augmentation, fake documents from
boundary-less data, up-sampling to target ratios, and dual cross-entropy
filtering of sentence pairs."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .corpus import Corpus, Document, Origin, ParallelDocument, Sentence
from .errors import EmptyCorpus, EmptySentence, LengthMismatch
from .model.transformer import make_batch, translation_loss_sum
from .subword import SubwordVocab, encode


@dataclass(frozen=True)
class FilterScore:
    """Lower is better: agreement term + adequacy term over the two per-token
    cross-entropies."""
    value: float
    components: tuple[float, float]  # (fwd_xe_per_token, bwd_xe_per_token)

    @staticmethod
    def from_components(fwd: float, bwd: float) -> "FilterScore":
        return FilterScore(abs(fwd - bwd) + 0.5 * (fwd + bwd), (fwd, bwd))


@dataclass(frozen=True)
class MixRecipe:
    """Named corpus streams with target fractions summing to 1."""
    streams: tuple[tuple[str, Fraction], ...]
    seed: int = 0

    def __post_init__(self):
        total = sum(Fraction(f) for _, f in self.streams)
        if total != 1:
            raise ValueError(f"stream fractions sum to {total}, expected 1")
        if any(Fraction(f) < 0 for _, f in self.streams):
            raise ValueError("stream fractions must be >= 0")


def _span_count(n: int) -> int:
    return n * (n + 1) // 2 - 1  # proper contiguous spans (full doc excluded)


def _span_from_index(n: int, idx: int) -> tuple[int, int]:
    """Map a flat index to (start, length), start-major; the full document is
    index n-1 (start 0, length n) and must be skipped by the caller."""
    start = 0
    remaining = idx
    while remaining >= n - start:
        remaining -= n - start
        start += 1
    return start, remaining + 1


def sample_subdocuments(pdoc: ParallelDocument, max_per_doc: int = 10,
                        rng_seed: int = 0) -> list[ParallelDocument]:
    """Up to max_per_doc distinct contiguous proper sub-spans of a document.

    Spans are sampled uniformly over (start, length) pairs without
    replacement and applied identically to both sides; the full document is
    never returned.
    """
    n = len(pdoc)
    total = _span_count(n)
    if total <= 0:
        return []
    rng = np.random.default_rng(rng_seed)
    k = min(max_per_doc, total)
    full_idx = n - 1  # start-major index of (0, n)
    picks = rng.choice(total, size=k, replace=False)
    out = []
    for pick in picks:
        idx = int(pick) + (1 if pick >= full_idx else 0)
        start, length = _span_from_index(n, idx)
        sub_id = f"{pdoc.id}/sub{start}+{length}"
        src = Document(pdoc.src.sentences[start:start + length],
                       pdoc.src.origin, sub_id)
        tgt = Document(pdoc.tgt.sentences[start:start + length],
                       pdoc.tgt.origin, sub_id)
        out.append(ParallelDocument(src, tgt))
    return out


class EmpiricalSampler:
    """Resamples document lengths from an observed length list."""

    def __init__(self, lengths):
        self.lengths = [int(x) for x in lengths if int(x) >= 1]
        if not self.lengths:
            raise EmptyCorpus("no lengths to sample from")

    def sample(self, rng) -> int:
        return self.lengths[int(rng.integers(len(self.lengths)))]


def corpus_length_sampler(corpus: Corpus) -> EmpiricalSampler:
    return EmpiricalSampler([len(d) for d in corpus.documents])


def make_fake_documents(pairs: list[tuple[str, str]], length_sampler,
                        rng_seed: int = 0, id_prefix: str = "fake") -> Corpus:
    """Partition shuffled parallel sentences into pseudo-documents.

    Boundaries are drawn from the length sampler; concatenating the fake
    documents in order reproduces the input pair list exactly. Origin is
    synthetic since the grouping carries no meaning.
    """
    rng = np.random.default_rng(rng_seed)
    docs = []
    pos = 0
    k = 0
    while pos < len(pairs):
        want = (length_sampler.sample(rng) if hasattr(length_sampler, "sample")
                else length_sampler(rng))
        chunk = pairs[pos: pos + max(1, int(want))]
        pos += len(chunk)
        doc_id = f"{id_prefix}#{k}"
        src = Document(tuple(Sentence(a) for a, _ in chunk), Origin.SYNTHETIC, doc_id)
        tgt = Document(tuple(Sentence(b) for _, b in chunk), Origin.SYNTHETIC, doc_id)
        docs.append(ParallelDocument(src, tgt))
        k += 1
    return Corpus(tuple(docs), "parallel")


def _clone_entry(doc, rep: int):
    def retag(d: Document) -> Document:
        return Document(d.sentences, d.origin, f"{d.id}@rep{rep}")

    if isinstance(doc, ParallelDocument):
        return ParallelDocument(retag(doc.src), retag(doc.tgt))
    return retag(doc)


def upsample(corpus: Corpus, target_size: int, rng_seed: int = 0) -> Corpus:
    """Repeat the corpus to ~target_size sentences: whole copies plus a
    uniform random remainder sample (within one document of the target)."""
    if len(corpus) == 0:
        raise EmptyCorpus("cannot upsample an empty corpus")
    size = corpus.sentence_count()
    if target_size < size:
        raise ValueError(f"target_size {target_size} < corpus size {size}")
    copies = target_size // size
    docs = list(corpus.documents)
    out = []
    for rep in range(copies):
        if rep == 0:
            out.extend(docs)
        else:
            out.extend(_clone_entry(d, rep) for d in docs)
    current = copies * size
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(docs))
    for j in order:
        if current >= target_size:
            break
        out.append(_clone_entry(docs[int(j)], copies))
        current += len(docs[int(j)])
    return Corpus(tuple(out), corpus.kind)


def dual_xe_score(fwd_model, bwd_model, pair, vocab: SubwordVocab | None = None
                  ) -> FilterScore:
    """Score one sentence pair by forward and backward per-token XE.

    fwd_model scores tgt given src, bwd_model src given tgt; each model is a
    (params, config) tuple. The pair is (src, tgt) as id lists, or texts when
    a vocab is given.
    """
    src, tgt = pair
    if vocab is not None:
        src = encode(vocab, src)
        tgt = encode(vocab, tgt)
    if len(src) == 0 or len(tgt) == 0:
        raise EmptySentence("dual_xe_score needs non-empty sentences")
    fwd_params, fwd_config = fwd_model
    bwd_params, bwd_config = bwd_model
    nll_f, n_f, _ = translation_loss_sum(
        fwd_params, fwd_config, make_batch([src], [tgt]), want_grads=False)
    nll_b, n_b, _ = translation_loss_sum(
        bwd_params, bwd_config, make_batch([tgt], [src]), want_grads=False)
    return FilterScore.from_components(nll_f / n_f, nll_b / n_b)


def score_corpus(fwd_model, bwd_model, corpus: Corpus,
                 vocab: SubwordVocab) -> list[FilterScore]:
    """One FilterScore per parallel corpus entry (its concatenated sides)."""
    scores = []
    for doc in corpus.documents:
        src = " ".join(doc.src.texts())
        tgt = " ".join(doc.tgt.texts())
        scores.append(dual_xe_score(fwd_model, bwd_model, (src, tgt), vocab))
    return scores


def filter_corpus(corpus: Corpus, scores: list[FilterScore],
                  keep_fraction) -> Corpus:
    """Keep the keep_fraction of entries with lowest scores, in stable order.

    Boundary ties break on the original index, so output is deterministic.
    """
    frac = Fraction(keep_fraction) if not isinstance(keep_fraction, float) \
        else Fraction(keep_fraction).limit_denominator(10**9)
    if not 0 < frac <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    if len(scores) != len(corpus):
        raise LengthMismatch(
            f"{len(scores)} scores for {len(corpus)} corpus entries")
    k = int(frac * len(corpus))
    ranked = sorted(range(len(corpus)), key=lambda i: (scores[i].value, i))
    keep = sorted(ranked[:k])
    return Corpus(tuple(corpus.documents[i] for i in keep), corpus.kind)


def write_scores(scores: list[FilterScore], path: str) -> None:
    """Score file: TSV of (pair index, fwd, bwd, value)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index\tfwd\tbwd\tvalue\n")
        for i, s in enumerate(scores):
            fh.write(f"{i}\t{s.components[0]:.6f}\t{s.components[1]:.6f}"
                     f"\t{s.value:.6f}\n")


def read_scores(path: str) -> list[FilterScore]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        for line in fh:
            _, fwd, bwd, _ = line.rstrip("\n").split("\t")
            out.append(FilterScore.from_components(float(fwd), float(bwd)))
    return out


def _stream_tag(doc, name: str):
    def retag(d: Document) -> Document:
        return Document(d.sentences, d.origin, f"{name}/{d.id}")

    if isinstance(doc, ParallelDocument):
        return ParallelDocument(retag(doc.src), retag(doc.tgt))
    return retag(doc)


def mix_corpora(recipe: MixRecipe, corpora: dict[str, Corpus],
                total_sentences: int) -> Corpus:
    """Assemble a mixture to ~total_sentences: each stream is up-sampled (or
    randomly thinned) to its target fraction, then document order is shuffled
    deterministically by the recipe seed."""
    merged = []
    kind = None
    for rep, (name, frac) in enumerate(recipe.streams):
        corpus = corpora[name]
        if kind is None:
            kind = corpus.kind
        if corpus.kind != kind:
            raise ValueError("all mixed corpora must share a kind")
        want = int(Fraction(frac) * total_sentences)
        if want == 0 or len(corpus) == 0:
            continue
        size = corpus.sentence_count()
        if want >= size:
            docs = upsample(corpus, want, rng_seed=recipe.seed + rep).documents
        else:
            rng = np.random.default_rng(recipe.seed + rep)
            picked = []
            current = 0
            for j in rng.permutation(len(corpus)):
                if current >= want:
                    break
                picked.append(corpus.documents[int(j)])
                current += len(corpus.documents[int(j)])
            docs = picked
        merged.extend(_stream_tag(d, name) for d in docs)
    rng = np.random.default_rng(recipe.seed)
    order = rng.permutation(len(merged))
    return Corpus(tuple(merged[int(i)] for i in order), kind or "parallel")
