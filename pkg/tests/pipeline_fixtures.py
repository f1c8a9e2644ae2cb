"""Shared fixtures: a two-manual corpus with a scripted ground-truth transcript."""

from __future__ import annotations

import json
from pathlib import Path

from chop import corpus as corpus_mod
from chop.llm_gateway import Transcript

from transcripts import record_chain_transcript

SECTION_WORDS = {
    "intro": "overview setup unpack install mounting location power supply safety warning",
    "filter": "filter mesh rinse water dry dust monthly replace clean airflow",
    "service": "service schedule inspection technician support warranty contact center",
}


def manual_text(model: str, part: str, tokens_per_section: int = 200) -> str:
    """Three sections of repeated boilerplate; the model name appears once."""
    sections = []
    for name, words in SECTION_WORDS.items():
        base = (words + " ").split()
        body = []
        while len(body) < tokens_per_section - 2:
            body.extend(base)
        body = body[: tokens_per_section - 2]
        if name == "intro":
            body[0] = model
            body[1] = part
        sections.append(" ".join(body))
    return " ".join(sections)


def cnm_json(model: str, part: str) -> dict:
    return {
        "category": "air conditioner",
        "nouns": [f"air conditioner {part}"],
        "model": model,
        "confidence": 0.9,
    }


def build_two_manual_setup(tmp_path: Path, chop_size: int = 300) -> dict:
    """Write corpus + transcript files and return paths and derived objects.

    Manuals are 600 tokens each, so CHOP chunks of ``chop_size`` align the
    manual boundary at chunk 2 and the scripted decisions are [T, F, T].
    """
    manuals = [("m1", "AC100", "filter"), ("m2", "AC200", "compressor")]
    corpus_path = tmp_path / "corpus.jsonl"
    with corpus_path.open("w", encoding="utf-8") as handle:
        for doc_id, model, part in manuals:
            handle.write(json.dumps({"doc_id": doc_id, "text": manual_text(model, part)}) + "\n")

    docs = corpus_mod.load_corpus(corpus_path)
    stitched = corpus_mod.stitch_documents(docs, "\n")
    chunks = corpus_mod.chunk_fixed(stitched, chop_size, 0)
    boundary_token = 600  # manual 1 is exactly 600 tokens
    decisions = []
    for prev, cur in zip(chunks, chunks[1:]):
        decisions.append(cur.token_span[0] != boundary_token)

    def cnm_for(chunk):
        model, part = ("AC100", "filter") if chunk.token_span[0] < boundary_token else ("AC200", "compressor")
        return cnm_json(model, part)

    transcript = Transcript()
    record_chain_transcript(transcript, chunks, decisions, cnm_for)
    transcript_path = tmp_path / "transcript.jsonl"
    transcript.save(transcript_path)

    return {
        "corpus_path": corpus_path,
        "transcript_path": transcript_path,
        "stitched": stitched,
        "chunks": chunks,
        "decisions": decisions,
        "manuals": manuals,
    }
