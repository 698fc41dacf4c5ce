"""Sentence- and document-structured corpora: data model, file formats, I/O.

File format: UTF-8, LF line endings, one sentence per line, one blank line
between documents, no trailing blank line required. Parallel corpora are two
such files with identical document/sentence structure plus a shared manifest.
Origin tags travel in a sidecar manifest (TSV: doc-id, origin) so the raw
text stays tool-agnostic.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

from .errors import EmptyCorpus, MalformedCorpus, UnknownOrigin

# Mark-up symbols reserved for document structure. Ingestion escapes literal
# occurrences so downstream markup parsing is unambiguous and reversible.
MARKUP_SYMBOLS = ("<BEG>", "<SEP>", "<END>", "<BRK>", "<CNT>")

_ESCAPES = [(s, s.replace("<", "&lt;").replace(">", "&gt;")) for s in MARKUP_SYMBOLS]


class Origin(str, Enum):
    ORIGINAL_SRC = "original-src"
    ORIGINAL_TGT = "original-tgt"
    SYNTHETIC = "synthetic"
    UNKNOWN = "unknown"


def escape_markup(text: str) -> str:
    """Escape the five reserved mark-up strings (HTML-entity style)."""
    for raw, esc in _ESCAPES:
        if raw in text:
            text = text.replace(raw, esc)
    return text


@dataclass(frozen=True)
class Sentence:
    text: str

    def __post_init__(self):
        if "\n" in self.text:
            raise MalformedCorpus("sentence text contains a newline")


@dataclass(frozen=True)
class Document:
    sentences: tuple[Sentence, ...]
    origin: Origin = Origin.UNKNOWN
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.sentences:
            raise MalformedCorpus(f"document {self.id!r} has no sentences")

    def __len__(self) -> int:
        return len(self.sentences)

    def texts(self) -> list[str]:
        return [s.text for s in self.sentences]


@dataclass(frozen=True)
class ParallelDocument:
    src: Document
    tgt: Document

    def __post_init__(self):
        if len(self.src) != len(self.tgt):
            raise MalformedCorpus(
                f"parallel document {self.src.id!r}: sentence count mismatch "
                f"({len(self.src)} vs {len(self.tgt)})"
            )

    @property
    def id(self) -> str:
        return self.src.id

    @property
    def origin(self) -> Origin:
        return self.src.origin

    def __len__(self) -> int:
        return len(self.src)


CorpusEntry = Union[Document, ParallelDocument]


@dataclass(frozen=True)
class Corpus:
    documents: tuple[CorpusEntry, ...]
    kind: str = "monolingual"  # "monolingual" | "parallel"

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        if self.kind not in ("monolingual", "parallel"):
            raise MalformedCorpus(f"unknown corpus kind {self.kind!r}")
        want = Document if self.kind == "monolingual" else ParallelDocument
        seen = set()
        for d in self.documents:
            if not isinstance(d, want):
                raise MalformedCorpus(
                    f"corpus of kind {self.kind!r} contains a {type(d).__name__}"
                )
            if d.id in seen:
                raise MalformedCorpus(f"duplicate document id {d.id!r}")
            seen.add(d.id)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def sentence_count(self) -> int:
        return sum(len(d) for d in self.documents)


def _read_blocks(path: str) -> list[list[str]]:
    """Read sentence-line blocks separated by single blank lines."""
    with open(path, encoding="utf-8", newline="\n") as fh:
        raw = fh.read()
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # trailing newline of the last sentence
    if not lines:
        return []
    blocks: list[list[str]] = [[]]
    for ln, line in enumerate(lines):
        if line == "":
            if not blocks[-1]:
                at = len(blocks) - 1
                msg = "blank line at file start" if at == 0 and ln == 0 else \
                    "two consecutive blank lines"
                raise MalformedCorpus(f"{path}: {msg} (document {at})")
            blocks.append([])
        else:
            blocks[-1].append(line)
    if not blocks[-1]:
        raise MalformedCorpus(f"{path}: trailing blank line after last document")
    return blocks


def load_documents(path: str, kind: str = "monolingual",
                   manifest: dict[str, Origin] | None = None) -> Corpus:
    """Load a monolingual corpus; document ids are "<filename>#<index>"."""
    if kind != "monolingual":
        raise MalformedCorpus("use load_parallel_documents for parallel corpora")
    name = os.path.basename(path)
    docs = []
    for i, block in enumerate(_read_blocks(path)):
        doc_id = f"{name}#{i}"
        origin = (manifest or {}).get(doc_id, Origin.UNKNOWN)
        docs.append(Document(
            tuple(Sentence(escape_markup(t)) for t in block), origin, doc_id))
    return Corpus(tuple(docs), "monolingual")


def load_parallel_documents(src_path: str, tgt_path: str,
                            manifest: dict[str, Origin] | None = None) -> Corpus:
    """Load two aligned corpus files into a parallel corpus.

    Document k in the source file aligns with document k in the target file;
    ids come from the source filename.
    """
    src_blocks = _read_blocks(src_path)
    tgt_blocks = _read_blocks(tgt_path)
    if len(src_blocks) != len(tgt_blocks):
        raise MalformedCorpus(
            f"document count mismatch: {len(src_blocks)} vs {len(tgt_blocks)}")
    name = os.path.basename(src_path)
    docs = []
    for i, (sb, tb) in enumerate(zip(src_blocks, tgt_blocks)):
        if len(sb) != len(tb):
            raise MalformedCorpus(
                f"parallel sentence-count mismatch at document {i} "
                f"({len(sb)} vs {len(tb)})")
        doc_id = f"{name}#{i}"
        origin = (manifest or {}).get(doc_id, Origin.UNKNOWN)
        src = Document(tuple(Sentence(escape_markup(t)) for t in sb), origin, doc_id)
        tgt = Document(tuple(Sentence(escape_markup(t)) for t in tb), origin, doc_id)
        docs.append(ParallelDocument(src, tgt))
    return Corpus(tuple(docs), "parallel")


def _write_blocks(docs: Iterable[Document], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        first = True
        for doc in docs:
            if not first:
                fh.write("\n")
            first = False
            for s in doc.sentences:
                if s.text == "":
                    raise MalformedCorpus(
                        f"document {doc.id!r} has an empty sentence; "
                        "empty lines are document separators")
                fh.write(s.text + "\n")


def write_documents(corpus: Corpus, path: str) -> None:
    """Write a monolingual corpus; load_documents(write_documents(c)) == c."""
    if corpus.kind != "monolingual":
        raise MalformedCorpus("use write_parallel_documents for parallel corpora")
    _write_blocks(corpus.documents, path)


def write_parallel_documents(corpus: Corpus, src_path: str, tgt_path: str) -> None:
    if corpus.kind != "parallel":
        raise MalformedCorpus("corpus is not parallel")
    _write_blocks((d.src for d in corpus.documents), src_path)
    _write_blocks((d.tgt for d in corpus.documents), tgt_path)


def read_manifest(path: str) -> dict[str, Origin]:
    """Read a TSV manifest (doc-id, origin), one row per document."""
    out: dict[str, Origin] = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise MalformedCorpus(f"{path}:{ln + 1}: expected 2 TSV columns")
            doc_id, origin = parts
            try:
                out[doc_id] = Origin(origin)
            except ValueError:
                raise MalformedCorpus(f"{path}:{ln + 1}: unknown origin {origin!r}")
    return out


def write_manifest(corpus: Corpus, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in corpus.documents:
            fh.write(f"{d.id}\t{d.origin.value}\n")


def with_origins(corpus: Corpus, manifest: dict[str, Origin]) -> Corpus:
    """Return a copy of the corpus with origins applied from a manifest."""
    def retag(doc: Document, origin: Origin) -> Document:
        return Document(doc.sentences, origin, doc.id)

    docs = []
    for d in corpus.documents:
        origin = manifest.get(d.id, Origin.UNKNOWN)
        if isinstance(d, ParallelDocument):
            docs.append(ParallelDocument(retag(d.src, origin), retag(d.tgt, origin)))
        else:
            docs.append(retag(d, origin))
    return Corpus(tuple(docs), corpus.kind)


def split_by_origin(corpus: Corpus) -> tuple[Corpus, Corpus]:
    """Partition into (original-src documents, original-tgt documents).

    Order is preserved in each half; every document must carry one of the two
    original-* tags.
    """
    first, second = [], []
    for d in corpus.documents:
        if d.origin == Origin.ORIGINAL_SRC:
            first.append(d)
        elif d.origin == Origin.ORIGINAL_TGT:
            second.append(d)
        else:
            raise UnknownOrigin(
                f"document {d.id!r} tagged {d.origin.value!r}; "
                "split needs original-src/original-tgt")
    return Corpus(tuple(first), corpus.kind), Corpus(tuple(second), corpus.kind)


def flatten_sentences(corpus: Corpus) -> list[str]:
    """All sentence texts of a monolingual corpus, in document order."""
    if corpus.kind != "monolingual":
        raise MalformedCorpus("flatten_sentences expects a monolingual corpus")
    return [s.text for d in corpus.documents for s in d.sentences]


def flatten_pairs(corpus: Corpus) -> list[tuple[str, str]]:
    """All (src, tgt) sentence pairs of a parallel corpus, in order."""
    if corpus.kind != "parallel":
        raise MalformedCorpus("flatten_pairs expects a parallel corpus")
    out = []
    for d in corpus.documents:
        out.extend((a.text, b.text) for a, b in zip(d.src.sentences, d.tgt.sentences))
    return out


def monolingual_side(corpus: Corpus, side: str) -> Corpus:
    """Project one side of a parallel corpus as a monolingual corpus."""
    if corpus.kind != "parallel":
        raise MalformedCorpus("corpus is not parallel")
    docs = tuple(getattr(d, side) for d in corpus.documents)
    return Corpus(docs, "monolingual")


def require_nonempty(corpus: Corpus) -> None:
    if len(corpus) == 0:
        raise EmptyCorpus("corpus has no documents")
