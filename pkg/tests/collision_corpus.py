"""Synthetic collision benchmark: near-duplicate manuals with distinct models.

Ten manuals share the same five 500-token sections almost verbatim; only the
intro carries the manual's model name and flagship part noun. Stitched into
one continuous file, raw chunk text barely separates manuals, while the
signature prefix carries the model token into every chunk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from chop.corpus import (
    Document,
    chunk_fixed,
    default_tokenizer,
    load_corpus,
    stitch_documents,
)
from chop.llm_gateway import Transcript

from transcripts import record_chain_transcript

CHUNK_TOKENS = 500
SECTIONS = ("intro", "filter", "hose", "remote", "safety")

MODELS = ["MX100", "KR200", "VT300", "PL400", "QZ500",
          "RS600", "JW700", "HN800", "BD900", "CF150"]
FLAGSHIPS = ["turbo fan", "quiet motor", "eco pump", "smart vent", "dual coil",
             "rapid dryer", "ion panel", "swing louver", "night sensor", "power saver"]

_SECTION_SENTENCES = {
    "intro": [
        "Thank you for purchasing this air conditioner unit from our product range.",
        "This owner manual describes installation operation and routine care procedures.",
        "Read every section carefully and keep the manual near the indoor unit.",
        "Unpack the carton check all accessories and inspect the housing for damage.",
    ],
    "filter": [
        "Open the front panel and slide the air filter mesh out of the rails.",
        "Clean the filter mesh with warm water and mild soap then rinse it well.",
        "Dry the filter completely in the shade before sliding it back into place.",
        "A clogged filter reduces airflow and cooling so clean it every month.",
    ],
    "hose": [
        "The drain hose carries condensate water away from the indoor unit tray.",
        "Check the drain hose clamp and keep the hose sloping down its whole run.",
        "Replace a cracked drain hose at once to prevent water damage indoors.",
        "Flush the hose each season so the condensate line never blocks or leaks.",
    ],
    "remote": [
        "The remote control needs two fresh alkaline batteries of the same type.",
        "Replace the remote batteries when the display fades or buttons lag.",
        "Point the remote at the indoor unit receiver within eight meters range.",
        "Never mix old and new batteries and remove them for long storage periods.",
    ],
    "safety": [
        "Disconnect the power supply before any cleaning or service procedure.",
        "Never operate the unit with wet hands or with panels removed from it.",
        "Keep children away from the outdoor unit and its rotating fan guard.",
        "Contact an authorized service technician for repairs inside the cabinet.",
    ],
}

_FILLER = "Follow the maintenance guidance in this manual for reliable seasonal operation."


@dataclass
class CollisionBenchmark:
    corpus_path: Path
    queries_path: Path
    transcript_path: Path
    stitched: Document
    section_spans: dict[tuple[int, str], tuple[int, int]]  # (manual, section) -> char span


def _section_text(section: str, model: str | None = None, flagship: str | None = None) -> str:
    tokenizer = default_tokenizer()
    sentences = list(_SECTION_SENTENCES[section])
    parts: list[str] = []
    count = 0
    i = 0
    if section == "intro":
        # The model name and flagship part appear exactly once, at the top.
        opener = (
            f"Thank you for purchasing the {model} air conditioner with the {flagship} assembly."
        )
        parts.append(opener)
        count = len(tokenizer.spans(opener))
        i = 1
    while True:
        sentence = sentences[i % len(sentences)] if i < 1000 else _FILLER
        n = len(tokenizer.spans(sentence))
        if count + n > CHUNK_TOKENS:
            break
        parts.append(sentence)
        count += n
        i += 1
    # Pad with single filler words (and a final period) to exactly CHUNK_TOKENS.
    remaining = CHUNK_TOKENS - count
    if remaining == 1:
        parts.append(".")
    elif remaining > 1:
        parts.append(" ".join(["guidance"] * (remaining - 1)) + ".")
    text = " ".join(parts)
    assert len(tokenizer.spans(text)) == CHUNK_TOKENS
    return text


def manual_text(model: str, flagship: str) -> tuple[str, dict[str, tuple[int, int]]]:
    """Five exact 500-token sections; returns text and per-section char spans."""
    spans: dict[str, tuple[int, int]] = {}
    pieces: list[str] = []
    offset = 0
    for section in SECTIONS:
        text = _section_text(section, model=model, flagship=flagship)
        if pieces:
            offset += 1  # single-space joiner
        spans[section] = (offset, offset + len(text))
        pieces.append(text)
        offset += len(text)
    return " ".join(pieces), spans


def build_collision_benchmark(tmp_path: Path) -> CollisionBenchmark:
    corpus_path = tmp_path / "collision_corpus.jsonl"
    section_spans: dict[tuple[int, str], tuple[int, int]] = {}
    manual_texts: list[str] = []
    with corpus_path.open("w", encoding="utf-8") as handle:
        for m, (model, flagship) in enumerate(zip(MODELS, FLAGSHIPS)):
            text, spans = manual_text(model, flagship)
            manual_texts.append(text)
            handle.write(json.dumps({"doc_id": f"manual{m:02d}", "text": text}) + "\n")
            for section, span in spans.items():
                section_spans[(m, section)] = span

    docs = load_corpus(corpus_path)
    stitched = stitch_documents(docs, "\n")
    # Shift per-manual spans into stitched coordinates.
    offset = 0
    for m, text in enumerate(manual_texts):
        for section in SECTIONS:
            start, end = section_spans[(m, section)]
            section_spans[(m, section)] = (offset + start, offset + end)
        offset += len(text) + 1  # "\n" joiner

    chunks = chunk_fixed(stitched, CHUNK_TOKENS, 0)
    assert len(chunks) == len(MODELS) * len(SECTIONS)
    decisions = [(i + 1) % len(SECTIONS) != 0 for i in range(len(chunks) - 1)]

    def cnm_for(chunk):
        manual = chunk.seq_index // len(SECTIONS)
        return {
            "category": "air conditioner",
            "nouns": [f"air conditioner {FLAGSHIPS[manual]}"],
            "model": MODELS[manual],
            "confidence": 0.9,
        }

    transcript = Transcript()
    record_chain_transcript(transcript, chunks, decisions, cnm_for)
    transcript_path = tmp_path / "collision_transcript.jsonl"
    transcript.save(transcript_path)

    queries_path = tmp_path / "collision_queries.jsonl"
    with queries_path.open("w", encoding="utf-8") as handle:
        for m, model in enumerate(MODELS):
            for section, text in (
                ("filter", f"How do I clean the air filter mesh on the {model} air conditioner?"),
                ("hose", f"Check and replace the drain hose clamp on the {model} unit."),
            ):
                start, end = section_spans[(m, section)]
                handle.write(
                    json.dumps(
                        {
                            "query_id": f"q-{model}-{section}",
                            "text": text,
                            "gold": [{"doc_id": stitched.doc_id, "start": start, "end": end}],
                        }
                    )
                    + "\n"
                )

    return CollisionBenchmark(
        corpus_path=corpus_path,
        queries_path=queries_path,
        transcript_path=transcript_path,
        stitched=stitched,
        section_spans=section_spans,
    )
