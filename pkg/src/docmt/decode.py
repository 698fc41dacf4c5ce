"""Decoding: beam and sampling search over single models and weighted
ensembles, whole-document translation with the fail-safe, noisy
back-translation, and second-pass decoding."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .corpus import Corpus, Document, Origin, ParallelDocument, Sentence
from .errors import LengthMismatch, MalformedMarkup, SequenceTooLong
from .markup import (
    failsafe_merge,
    loose_sentences,
    mark_up,
    mark_up_parallel,
    parse_marked,
    strip_markup,
)
from .model.config import TransformerConfig
from .model.params import Params, load_checkpoint
from .model.transformer import LN_EPS, encoder_forward, positional_encoding
from .subword import EOS, N_SPECIALS, PAD, SubwordVocab, decode as sw_decode, encode as sw_encode


@dataclass(frozen=True)
class EnsembleSpec:
    """Ordered (model, weight) members; weights are positive and need not be
    normalized -- scores use the weight-normalized mean of log-probs."""
    members: tuple[tuple[Params, TransformerConfig], ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.members or len(self.members) != len(self.weights):
            raise ValueError("ensemble needs one positive weight per member")
        if any(w <= 0 for w in self.weights):
            raise ValueError("ensemble weights must be > 0")
        first = self.members[0][1]
        for _, config in self.members:
            if (config.vocab_size, config.max_len) != (first.vocab_size, first.max_len):
                raise ValueError("ensemble members must share vocab and max_len")

    @property
    def config(self) -> TransformerConfig:
        return self.members[0][1]


def single_model_spec(params: Params, config: TransformerConfig) -> EnsembleSpec:
    return EnsembleSpec(((params, config),), (1.0,))


def read_ensemble_file(path: str) -> EnsembleSpec:
    """Ensemble spec file: one member per line, "checkpoint-path<TAB>weight"."""
    members = []
    weights = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            ckpt_path, weight = line.split("\t")
            params, config = load_checkpoint(ckpt_path)
            members.append((params, config))
            weights.append(float(weight))
    return EnsembleSpec(tuple(members), tuple(weights))


def write_ensemble_file(path: str, entries: list[tuple[str, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ckpt_path, weight in entries:
            fh.write(f"{ckpt_path}\t{weight}\n")


@dataclass
class DecodeConfig:
    mode: str = "beam"  # "beam" | "greedy" | "sample"
    beam_size: int = 4
    max_out_len: int = 128
    length_norm_alpha: float = 0.6
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


@dataclass
class DecodeResult:
    ids: list[int]
    score: float
    completed: bool
    warning: str | None = None


def ensemble_logprob(weights, member_logprobs) -> np.ndarray:
    """Weight-normalized mean of member log-probabilities."""
    total = sum(weights)
    out = (weights[0] / total) * member_logprobs[0]
    for w, lp in zip(weights[1:], member_logprobs[1:]):
        out = out + (w / total) * lp
    return out


def _ln_rows(x, g, b):
    return kernels.layernorm_forward(np.ascontiguousarray(x), g, b, LN_EPS)[0]


class _MemberState:
    """Incremental decoder state for one model over `width` hypotheses."""

    def __init__(self, params, config, src_ids, fp_ids, width, max_steps):
        self.params = params
        self.config = config
        self.width = width
        self.t = 0
        d = config.model_dim
        self.heads = config.heads
        self.dh = d // config.heads
        self.scale = np.asarray(1.0 / np.sqrt(self.dh), dtype=np.dtype(config.dtype))
        self.sqrt_d = np.asarray(np.sqrt(d), dtype=np.dtype(config.dtype))
        self.pos = positional_encoding(config.max_len, d, np.dtype(config.dtype))

        src = np.asarray([list(src_ids) + [EOS]], dtype=np.int32)
        if src.shape[1] > config.max_len or max_steps > config.max_len:
            raise SequenceTooLong(
                f"decode input {src.shape[1]} / output budget {max_steps} "
                f"exceed max_len {config.max_len}")
        src_len = np.asarray([src.shape[1]], dtype=np.int64)
        memory, _ = encoder_forward(params, config, src, src_len)
        self.cross = self._precompute_cross(memory, "cross")
        self.cross_valid = int(src_len[0])

        self.cross2 = None
        self.cross2_valid = 0
        if config.dual_encoder:
            if fp_ids is None:
                fp_ids = []
            if len(fp_ids) > 0:
                fp = np.asarray([list(fp_ids) + [EOS]], dtype=np.int32)
                fp_len = np.asarray([fp.shape[1]], dtype=np.int64)
            else:
                fp = np.full((1, 1), PAD, dtype=np.int32)
                fp_len = np.zeros(1, dtype=np.int64)
            if fp.shape[1] > config.max_len:
                raise SequenceTooLong("first-pass input exceeds max_len")
            memory2, _ = encoder_forward(params, config, fp, fp_len, stack="enc2")
            self.cross2 = self._precompute_cross(memory2, "cross2")
            self.cross2_valid = int(fp_len[0])

        dtype = np.dtype(config.dtype)
        self.k_self = [np.zeros((width, self.heads, max_steps, self.dh), dtype)
                       for _ in range(config.depth)]
        self.v_self = [np.zeros((width, self.heads, max_steps, self.dh), dtype)
                       for _ in range(config.depth)]

    def _precompute_cross(self, memory, which):
        """Per-layer cross-attention keys/values from the encoder output."""
        p = self.params
        _, s, d = memory.shape
        mem2 = memory.reshape(-1, d)
        layers = []
        for i in range(1, self.config.depth + 1):
            pfx = f"dec.{i}.{which}"
            k = (mem2 @ p[pfx + ".wk"] + p[pfx + ".bk"]).reshape(1, s, self.heads, self.dh)
            v = (mem2 @ p[pfx + ".wv"] + p[pfx + ".bv"]).reshape(1, s, self.heads, self.dh)
            layers.append((np.ascontiguousarray(k.transpose(0, 2, 1, 3)),
                           np.ascontiguousarray(v.transpose(0, 2, 1, 3))))
        return layers


    def _attend_cross(self, x, pfx, layers, layer_idx, valid):
        p = self.params
        w = x.shape[0]
        k, v = layers[layer_idx]
        s = k.shape[2]
        q = (x @ p[pfx + ".wq"] + p[pfx + ".bq"]).reshape(w, self.heads, 1, self.dh)
        scores = (q @ k.transpose(0, 1, 3, 2)) * self.scale  # (w, h, 1, s)
        lim = np.full(w * self.heads, valid, dtype=np.int64)
        probs = kernels.softmax_rows(
            np.ascontiguousarray(scores.reshape(-1, s)), lim).reshape(w, self.heads, 1, s)
        ctx = (probs @ v).reshape(w, self.heads * self.dh)
        return ctx @ p[pfx + ".wo"] + p[pfx + ".bo"]

    def step(self, tokens) -> np.ndarray:
        """Advance one position; returns log-probabilities (width, vocab)."""
        p = self.params
        cfg = self.config
        w = self.width
        t = self.t
        x = p["emb.tok"][tokens] * self.sqrt_d + self.pos[t]
        for i in range(1, cfg.depth + 1):
            pfx = f"dec.{i}"
            a = _ln_rows(x, p[pfx + ".ln1.g"], p[pfx + ".ln1.b"])
            q = (a @ p[pfx + ".self.wq"] + p[pfx + ".self.bq"]).reshape(
                w, self.heads, 1, self.dh)
            self.k_self[i - 1][:, :, t, :] = (
                a @ p[pfx + ".self.wk"] + p[pfx + ".self.bk"]).reshape(
                    w, self.heads, self.dh)
            self.v_self[i - 1][:, :, t, :] = (
                a @ p[pfx + ".self.wv"] + p[pfx + ".self.bv"]).reshape(
                    w, self.heads, self.dh)
            keys = self.k_self[i - 1][:, :, : t + 1, :]
            vals = self.v_self[i - 1][:, :, : t + 1, :]
            scores = (q @ keys.transpose(0, 1, 3, 2)) * self.scale
            lim = np.full(w * self.heads, t + 1, dtype=np.int64)
            probs = kernels.softmax_rows(
                np.ascontiguousarray(scores.reshape(-1, t + 1)), lim).reshape(
                    w, self.heads, 1, t + 1)
            ctx = (probs @ vals).reshape(w, self.heads * self.dh)
            x = x + (ctx @ p[pfx + ".self.wo"] + p[pfx + ".self.bo"])

            a = _ln_rows(x, p[pfx + ".ln2.g"], p[pfx + ".ln2.b"])
            x = x + self._attend_cross(a, pfx + ".cross", self.cross, i - 1,
                                       self.cross_valid)
            if self.cross2 is not None:
                a = _ln_rows(x, p[pfx + ".ln2b.g"], p[pfx + ".ln2b.b"])
                x = x + self._attend_cross(a, pfx + ".cross2", self.cross2, i - 1,
                                           self.cross2_valid)
            a = _ln_rows(x, p[pfx + ".ln3.g"], p[pfx + ".ln3.b"])
            h1 = np.maximum(a @ p[pfx + ".ff.w1"] + p[pfx + ".ff.b1"], 0)
            x = x + (h1 @ p[pfx + ".ff.w2"] + p[pfx + ".ff.b2"])
        h = _ln_rows(x, p["dec.ln.g"], p["dec.ln.b"])
        logits = h @ p["out.w"] + p["out.b"]
        mx = logits.max(axis=1, keepdims=True)
        lse = mx + np.log(np.exp(logits - mx).sum(axis=1, keepdims=True))
        self.t += 1
        return logits - lse

    def reorder(self, parents) -> None:
        for i in range(len(self.k_self)):
            self.k_self[i] = np.ascontiguousarray(self.k_self[i][parents])
            self.v_self[i] = np.ascontiguousarray(self.v_self[i][parents])


def _norm(score: float, length: int, alpha: float) -> float:
    return score / (length ** alpha) if alpha else score


def beam_decode(spec: EnsembleSpec, config: DecodeConfig, input_ids,
                fp_ids=None) -> DecodeResult:
    """Length-normalized beam search over the weighted ensemble.

    Deterministic: candidate ties break on flat (hypothesis, token) index.
    When no hypothesis emits <EOS> within max_out_len the best uncompleted one
    is returned with a warning instead of failing.
    """
    width = 1 if config.mode == "greedy" else config.beam_size
    max_steps = config.max_out_len
    states = [
        _MemberState(params, mconfig, input_ids, fp_ids, width, max_steps)
        for params, mconfig in spec.members
    ]
    vocab_size = spec.config.vocab_size

    alive_scores = np.full(width, -np.inf)
    alive_scores[0] = 0.0
    alive_tokens = np.full(width, EOS, dtype=np.int64)
    alive_seqs: list[list[int]] = [[] for _ in range(width)]
    finished: list[tuple[float, float, list[int]]] = []

    for t in range(max_steps):
        lp = ensemble_logprob(
            spec.weights, [state.step(alive_tokens) for state in states])
        total = alive_scores[:, None] + lp
        flat = total.ravel()
        k = min(2 * width, flat.size)
        part = np.argpartition(-flat, k - 1)[:k]
        order = part[np.lexsort((part, -flat[part]))]

        new_parents: list[int] = []
        new_tokens: list[int] = []
        new_scores: list[float] = []
        new_seqs: list[list[int]] = []
        for rank, idx in enumerate(order):
            score = float(flat[idx])
            if not np.isfinite(score):
                continue
            parent, token = divmod(int(idx), vocab_size)
            if token == EOS:
                # an <EOS> hypothesis finalizes only from the top `width`
                # candidates; lower-ranked ones must not trigger the stop rule
                if rank < width:
                    finished.append(
                        (_norm(score, t + 1, config.length_norm_alpha), score,
                         alive_seqs[parent]))
            elif len(new_parents) < width:
                new_parents.append(parent)
                new_tokens.append(token)
                new_scores.append(score)
                new_seqs.append(alive_seqs[parent] + [token])
        if not new_parents or len(finished) >= width:
            break
        while len(new_parents) < width:  # beam not fillable: pad with dead rows
            new_parents.append(new_parents[-1])
            new_tokens.append(new_tokens[-1])
            new_scores.append(-np.inf)
            new_seqs.append(list(new_seqs[-1]))
        parents = np.asarray(new_parents)
        for state in states:
            state.reorder(parents)
        alive_tokens = np.asarray(new_tokens, dtype=np.int64)
        alive_scores = np.asarray(new_scores)
        alive_seqs = new_seqs

    if finished:
        norm_score, raw, ids = max(finished, key=lambda f: (f[0], -len(f[2])))
        return DecodeResult(list(ids), norm_score, True)
    best = int(np.argmax(alive_scores))
    norm_score = _norm(float(alive_scores[best]), max(len(alive_seqs[best]), 1),
                       config.length_norm_alpha)
    return DecodeResult(list(alive_seqs[best]), norm_score, False,
                        warning="no completed hypothesis within max_out_len")


def greedy_decode(spec: EnsembleSpec, config: DecodeConfig, input_ids,
                  fp_ids=None) -> DecodeResult:
    return beam_decode(spec, replace(config, mode="greedy", beam_size=1),
                       input_ids, fp_ids=fp_ids)


def gumbel_argmax(logits, temperature: float, rng) -> int:
    """One Gumbel-softmax draw: argmax(logits / temperature + g).

    Equivalent in distribution to sampling softmax(logits / temperature).
    """
    gumbel = -np.log(-np.log(rng.random(np.shape(logits)[-1])))
    return int(np.argmax(np.asarray(logits) / temperature + gumbel))


def sample_decode(params: Params, config: DecodeConfig, input_ids,
                  model_config: TransformerConfig = None, fp_ids=None,
                  seed: int | None = None) -> DecodeResult:
    """Gumbel-argmax sampling from the tempered softmax, one token at a time."""
    if model_config is None:
        raise ValueError("sample_decode needs the model config")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    state = _MemberState(params, model_config, input_ids, fp_ids, 1,
                         config.max_out_len)
    ids: list[int] = []
    score = 0.0
    token = np.asarray([EOS], dtype=np.int64)
    for _ in range(config.max_out_len):
        lp = state.step(token)[0]
        choice = gumbel_argmax(lp, config.temperature, rng)
        score += float(lp[choice])
        if choice == EOS:
            return DecodeResult(ids, score, True)
        ids.append(choice)
        token = np.asarray([choice], dtype=np.int64)
    return DecodeResult(ids, score, False,
                        warning="no completed hypothesis within max_out_len")


def _decode_ids_to_text(vocab: SubwordVocab, ids) -> str:
    return sw_decode(vocab, [i for i in ids if i >= N_SPECIALS])


def translate_sentences(spec: EnsembleSpec, config: DecodeConfig,
                        texts: list[str], vocab: SubwordVocab) -> list[str]:
    """Independent sentence-by-sentence translation."""
    out = []
    for text in texts:
        result = beam_decode(spec, config, sw_encode(vocab, text))
        out.append(_decode_ids_to_text(vocab, result.ids))
    return out


def translate_document(spec: EnsembleSpec, config: DecodeConfig, doc: Document,
                       vocab: SubwordVocab, limit: int = 1000
                       ) -> tuple[Document, bool]:
    """Whole-document translation with the sentence-count fail-safe.

    Decodes each marked chunk and splits on predicted separators; when the
    output sentence count disagrees with the input (or the mark-up is
    malformed), a sentence-level translation of the same document becomes the
    template for the fail-safe merge. Output always has exactly
    len(doc.sentences) sentences.
    """
    seqs, _ = mark_up(doc, vocab, limit)
    chunk_outputs = []
    parsed: list[Sentence] = []
    well_formed = True
    for seq in seqs:
        result = beam_decode(spec, config, list(seq.ids))
        chunk_outputs.append(result.ids)
        if well_formed:
            try:
                parsed.extend(strip_markup(parse_marked(result.ids), vocab))
            except MalformedMarkup:
                well_formed = False
    if well_formed and len(parsed) == len(doc.sentences):
        return Document(tuple(parsed), doc.origin, doc.id), False

    template = [Sentence(t) for t in
                translate_sentences(spec, config, doc.texts(), vocab)]
    doc_out: list[Sentence] = []
    for ids in chunk_outputs:
        doc_out.extend(loose_sentences(ids, vocab))
    merged = failsafe_merge(doc_out, template, vocab)
    return Document(tuple(merged), doc.origin, doc.id), True


def translate_corpus(spec: EnsembleSpec, config: DecodeConfig, corpus: Corpus,
                     vocab: SubwordVocab, limit: int = 1000,
                     mode: str = "document") -> tuple[Corpus, int]:
    """Translate every document; returns (corpus, number of fail-safe uses)."""
    docs = []
    fails = 0
    for doc in corpus.documents:
        if mode == "sentence":
            texts = translate_sentences(spec, config, doc.texts(), vocab)
            out = Document(tuple(Sentence(t) for t in texts), doc.origin, doc.id)
        else:
            out, used = translate_document(spec, config, doc, vocab, limit)
            fails += int(used)
        docs.append(out)
    return Corpus(tuple(docs), "monolingual"), fails


def backtranslate_corpus(reverse_params: Params,
                         reverse_config: TransformerConfig,
                         config: DecodeConfig, mono_docs: Corpus,
                         vocab: SubwordVocab) -> Corpus:
    """Noisy back-translation of target-language documents.

    Every document is back-translated sentence-by-sentence with sampling;
    synthetic sources pair with the authentic targets, preserving document
    boundaries and sentence counts. Sampling is seeded per sentence as
    seed XOR running index so results don't depend on scheduling.
    """
    out_docs = []
    index = 0
    for doc in mono_docs.documents:
        synthetic = []
        for sent in doc.sentences:
            result = sample_decode(reverse_params, config,
                                   sw_encode(vocab, sent.text),
                                   model_config=reverse_config,
                                   seed=config.seed ^ index)
            text = _decode_ids_to_text(vocab, result.ids)
            synthetic.append(Sentence(text if text else "<UNK>"))
            index += 1
        src_doc = Document(tuple(synthetic), Origin.SYNTHETIC, doc.id)
        tgt_doc = Document(doc.sentences, Origin.SYNTHETIC, doc.id)
        out_docs.append(ParallelDocument(src_doc, tgt_doc))
    return Corpus(tuple(out_docs), "parallel")


def second_pass_decode(dual_spec: EnsembleSpec, config: DecodeConfig,
                       src: Document, first_pass: Document,
                       vocab: SubwordVocab, limit: int = 1000
                       ) -> tuple[Document, bool]:
    """Re-decode a sentence-level translation through a dual-encoder model.

    Both inputs are marked up with shared chunk boundaries; the first-pass
    translation doubles as the fail-safe template, so the output always has
    exactly len(src.sentences) sentences.
    """
    if len(src) != len(first_pass):
        raise LengthMismatch(
            f"src has {len(src)} sentences, first pass {len(first_pass)}")
    pdoc = ParallelDocument(
        Document(src.sentences, src.origin, src.id),
        Document(first_pass.sentences, src.origin, src.id))
    pairs, _ = mark_up_parallel(pdoc, vocab, limit)
    chunk_outputs = []
    parsed: list[Sentence] = []
    well_formed = True
    for src_seq, fp_seq in pairs:
        result = beam_decode(dual_spec, config, list(src_seq.ids),
                             fp_ids=list(fp_seq.ids))
        chunk_outputs.append(result.ids)
        if well_formed:
            try:
                parsed.extend(strip_markup(parse_marked(result.ids), vocab))
            except MalformedMarkup:
                well_formed = False
    if well_formed and len(parsed) == len(src.sentences):
        return Document(tuple(parsed), src.origin, src.id), False
    doc_out: list[Sentence] = []
    for ids in chunk_outputs:
        doc_out.extend(loose_sentences(ids, vocab))
    merged = failsafe_merge(doc_out, list(first_pass.sentences), vocab)
    return Document(tuple(merged), src.origin, src.id), True
