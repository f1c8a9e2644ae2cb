"""Corpus loading, stitching, and chunking.

Documents come in as line-delimited JSON records. They can be stitched into
one continuous file (no synthetic separators beyond the joiner, so explicit
document-boundary cues stay weak) and segmented either by fixed token windows
or by sentence-level cosine boundaries.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    source_path: str | None = None


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    seq_index: int
    text: str
    token_span: tuple[int, int]
    char_span: tuple[int, int]


@dataclass(frozen=True)
class Sentence:
    text: str
    char_span: tuple[int, int]


class CorpusError(ValueError):
    """Malformed corpus input (bad record, duplicate id, empty document)."""


# Word runs or single punctuation marks; whitespace separates tokens.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class RegexTokenizer:
    """Deterministic tokenizer: word runs plus individual punctuation marks.

    Any object with a ``spans(text) -> list[(start, end)]`` method can stand
    in for this class (e.g. an adapter over a BPE vocabulary).
    """

    def __init__(self, pattern: re.Pattern[str] = _TOKEN_RE) -> None:
        self._pattern = pattern

    def spans(self, text: str) -> list[tuple[int, int]]:
        return [m.span() for m in self._pattern.finditer(text)]


def default_tokenizer() -> RegexTokenizer:
    return RegexTokenizer()


def load_corpus(path: str | Path) -> list[Document]:
    """Load documents from a UTF-8 JSONL file of {doc_id, text[, source_path]}."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    docs: list[Document] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON record: {exc}") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: record must be a JSON object")
            doc_id = record.get("doc_id")
            text = record.get("text")
            if not isinstance(doc_id, str) or not doc_id:
                raise CorpusError(f"{path}:{lineno}: missing or empty 'doc_id'")
            if not isinstance(text, str) or not text:
                raise CorpusError(f"{path}:{lineno}: missing or empty 'text'")
            if doc_id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
            seen.add(doc_id)
            docs.append(Document(doc_id=doc_id, text=text, source_path=record.get("source_path")))
    return docs


def stitch_documents(docs: Sequence[Document], joiner: str = "\n") -> Document:
    """Concatenate documents into one continuous document.

    No headers or separators beyond ``joiner`` are injected, so the result
    carries only the boundary cues the source texts themselves provide.
    """
    if not docs:
        raise CorpusError("cannot stitch an empty document sequence")
    digest = hashlib.sha256("\x1f".join(d.doc_id for d in docs).encode("utf-8")).hexdigest()
    return Document(
        doc_id=f"stitch-{digest[:12]}",
        text=joiner.join(d.text for d in docs),
        source_path=None,
    )


def chunk_fixed(
    doc: Document,
    size: int,
    overlap: int,
    tokenizer=None,
) -> list[Chunk]:
    """Split a document into fixed token windows of ``size`` with ``overlap``.

    Chunk i covers token span [i*(size-overlap), i*(size-overlap)+size),
    clipped to the document length. A trailing window fully contained in the
    previous chunk's span is suppressed so no duplicate content is indexed.
    """
    if size < 1:
        raise CorpusError(f"chunk size must be >= 1, got {size}")
    if overlap < 0 or overlap >= size:
        raise CorpusError(f"overlap must satisfy 0 <= overlap < size, got {overlap} vs {size}")
    tokenizer = tokenizer or default_tokenizer()
    token_spans = tokenizer.spans(doc.text)
    n = len(token_spans)
    if n == 0:
        raise CorpusError(f"document {doc.doc_id!r} has no tokens")

    stride = size - overlap
    chunks: list[Chunk] = []
    start = 0
    while start < n:
        end = min(start + size, n)
        if chunks and end <= chunks[-1].token_span[1]:
            break  # fully contained in the previous window
        char_start = token_spans[start][0]
        char_end = token_spans[end - 1][1]
        seq = len(chunks)
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}::c{seq}",
                doc_id=doc.doc_id,
                seq_index=seq,
                text=doc.text[char_start:char_end],
                token_span=(start, end),
                char_span=(char_start, char_end),
            )
        )
        start += stride
    return chunks


_BLANK_LINE_RE = re.compile(r"\n[ \t]*\n+")
_TERMINAL_RE = re.compile(r"[.!?]")


def split_sentences(doc: Document) -> list[Sentence]:
    """Split after '.', '!' or '?' followed by whitespace, and at blank lines.

    Sentences are trimmed; empty results are dropped. With no terminal
    punctuation at all, the whole text is a single sentence.
    """
    sentences: list[Sentence] = []
    for block_start, block_end in _blocks(doc.text):
        block = doc.text[block_start:block_end]
        seg_start = 0
        for match in _TERMINAL_RE.finditer(block):
            after = match.end()
            if after < len(block) and block[after].isspace():
                _append_trimmed(sentences, doc.text, block_start + seg_start, block_start + after)
                seg_start = after
        _append_trimmed(sentences, doc.text, block_start + seg_start, block_end)
    return sentences


def _blocks(text: str) -> Iterable[tuple[int, int]]:
    pos = 0
    for match in _BLANK_LINE_RE.finditer(text):
        yield pos, match.start()
        pos = match.end()
    yield pos, len(text)


def _append_trimmed(out: list[Sentence], text: str, start: int, end: int) -> None:
    segment = text[start:end]
    stripped = segment.strip()
    if not stripped:
        return
    lead = len(segment) - len(segment.lstrip())
    out.append(Sentence(text=stripped, char_span=(start + lead, start + lead + len(stripped))))


def chunk_cosine(
    doc: Document,
    threshold: float,
    embed_fn: Callable[[str], Sequence[float]],
    tokenizer=None,
) -> list[Chunk]:
    """Group consecutive sentences while their embedding cosine >= threshold.

    A boundary is inserted between sentences whose similarity drops below the
    threshold; each chunk is the in-order concatenation of its sentences.
    """
    if not -1.0 <= threshold <= 1.0:
        raise CorpusError(f"threshold must lie in [-1, 1], got {threshold}")
    sentences = split_sentences(doc)
    if not sentences:
        raise CorpusError(f"document {doc.doc_id!r} yields no sentences")
    tokenizer = tokenizer or default_tokenizer()
    token_spans = tokenizer.spans(doc.text)

    vectors = [np.asarray(embed_fn(s.text), dtype=np.float64) for s in sentences]
    groups: list[list[Sentence]] = [[sentences[0]]]
    for i in range(1, len(sentences)):
        if _cosine(vectors[i - 1], vectors[i]) >= threshold:
            groups[-1].append(sentences[i])
        else:
            groups.append([sentences[i]])

    chunks: list[Chunk] = []
    for seq, group in enumerate(groups):
        char_start = group[0].char_span[0]
        char_end = group[-1].char_span[1]
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}::s{seq}",
                doc_id=doc.doc_id,
                seq_index=seq,
                text=" ".join(s.text for s in group),
                token_span=_token_window(token_spans, char_start, char_end),
                char_span=(char_start, char_end),
            )
        )
    return chunks


def _token_window(token_spans: list[tuple[int, int]], char_start: int, char_end: int) -> tuple[int, int]:
    first = None
    last = None
    for idx, (ts, te) in enumerate(token_spans):
        if te <= char_start:
            continue
        if ts >= char_end:
            break
        if first is None:
            first = idx
        last = idx
    if first is None:
        return (0, 0)
    return (first, last + 1)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
