"""Sequential continuity chain over adjacent chunks.

For each adjacent pair the chat model judges whether the current chunk
continues the previous one's document flow. TRUE inherits the previous
signature unchanged; FALSE re-extracts a fresh one. The chain is strictly
sequential within a document because each signature depends on the last.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .cnm import CNM, extract_cnm
from .corpus import Chunk
from .llm_gateway import ChatRequest, prompt_digest
from .prompts import load_prompt

logger = logging.getLogger(__name__)

CD_PROMPT_VERSION = "continuity_decide_v1"
DEFAULT_ANCHOR_CAP = 600

INHERITED = "INHERITED"
EXTRACTED = "EXTRACTED"


class ContinuityParseError(ValueError):
    pass


@dataclass(frozen=True)
class ContinuityDecision:
    value: bool
    raw_response: str
    pair: tuple[str, str]


@dataclass(frozen=True)
class Anchor:
    text: str
    source_chunk_id: str


@dataclass(frozen=True)
class AnnotatedChunk:
    chunk: Chunk
    cnm: CNM
    cnm_origin: str
    decision: ContinuityDecision | None = None


def make_anchor(prev: Chunk, cap: int = DEFAULT_ANCHOR_CAP) -> Anchor:
    """Anchor on the boundary region: the last ``cap`` characters of the chunk."""
    return Anchor(text=prev.text[-cap:], source_chunk_id=prev.chunk_id)


def build_cd_prompt(anchor: Anchor, cur_text: str, cap: int = DEFAULT_ANCHOR_CAP) -> str:
    """Fill the decision template; current text is truncated to the anchor cap."""
    template = load_prompt(CD_PROMPT_VERSION)
    return template.replace("{anchor}", anchor.text).replace("{current}", cur_text[:cap])


def parse_cd_response(raw: str) -> bool:
    """Accept {"same": true|false} or a bare true/false token."""
    stripped = raw.strip()
    lowered = stripped.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    start = stripped.find("{")
    end = stripped.rfind("}")
    if start != -1 and end > start:
        try:
            data = json.loads(stripped[start:end + 1])
        except json.JSONDecodeError as exc:
            raise ContinuityParseError(f"invalid JSON: {exc}") from exc
        if isinstance(data, dict) and isinstance(data.get("same"), bool):
            return data["same"]
        raise ContinuityParseError("JSON object lacks a boolean 'same' field")
    raise ContinuityParseError("response is neither a bare boolean nor a 'same' object")


def decide_continuity(
    prev: Chunk,
    cur: Chunk,
    gateway,
    anchor_cap: int = DEFAULT_ANCHOR_CAP,
) -> ContinuityDecision:
    """Judge whether ``cur`` continues ``prev``'s document flow.

    Unparseable output gets one corrective re-prompt and then defaults to
    TRUE, the conservative keep-same-manual direction.
    """
    if prev.doc_id != cur.doc_id or prev.seq_index + 1 != cur.seq_index:
        raise ValueError(
            f"chunks are not adjacent: {prev.chunk_id} (seq {prev.seq_index}) vs "
            f"{cur.chunk_id} (seq {cur.seq_index})"
        )
    prompt = build_cd_prompt(make_anchor(prev, anchor_cap), cur.text, anchor_cap)
    response = gateway.complete(ChatRequest(prompt=prompt))
    pair = (prev.chunk_id, cur.chunk_id)
    try:
        return ContinuityDecision(value=parse_cd_response(response.text), raw_response=response.text, pair=pair)
    except ContinuityParseError as first_error:
        corrective = (
            f"{prompt}\n\nYour previous reply could not be parsed: {first_error}\n"
            'Return JSON ONLY: {"same": true} or {"same": false}.'
        )
        retry = gateway.complete(ChatRequest(prompt=corrective))
        try:
            return ContinuityDecision(value=parse_cd_response(retry.text), raw_response=retry.text, pair=pair)
        except ContinuityParseError:
            logger.warning("continuity decision unparseable twice for %s; defaulting to TRUE", pair)
            return ContinuityDecision(value=True, raw_response=retry.text, pair=pair)


def propagate_cnm(
    prev_cnm: CNM,
    decision: ContinuityDecision,
    cur: Chunk,
    extractor: Callable[[Chunk], CNM],
) -> tuple[CNM, str]:
    """TRUE inherits the previous signature; FALSE extracts a fresh one."""
    if decision.value:
        return prev_cnm, INHERITED
    return extractor(cur), EXTRACTED


def run_chain(
    chunks: Sequence[Chunk],
    gateway,
    anchor_cap: int = DEFAULT_ANCHOR_CAP,
    extractor: Callable[[Chunk], CNM] | None = None,
    decider: Callable[[Chunk, Chunk], ContinuityDecision] | None = None,
) -> list[AnnotatedChunk]:
    """Annotate an ordered chunk sequence with signatures and decisions.

    The first chunk is always extracted; every later chunk carries the
    decision against its immediate predecessor and the inherited or
    re-extracted signature. Empty input yields empty output.
    """
    if extractor is None:
        extractor = lambda chunk: extract_cnm(chunk, gateway)
    if decider is None:
        decider = lambda prev, cur: decide_continuity(prev, cur, gateway, anchor_cap)

    annotated: list[AnnotatedChunk] = []
    if not chunks:
        return annotated

    current_cnm = extractor(chunks[0])
    annotated.append(AnnotatedChunk(chunk=chunks[0], cnm=current_cnm, cnm_origin=EXTRACTED))
    for prev, cur in zip(chunks, chunks[1:]):
        decision = decider(prev, cur)
        current_cnm, origin = propagate_cnm(current_cnm, decision, cur, extractor)
        annotated.append(
            AnnotatedChunk(chunk=cur, cnm=current_cnm, cnm_origin=origin, decision=decision)
        )
    return annotated


def write_audit_log(annotated: Sequence[AnnotatedChunk], path: str | Path) -> None:
    """Write the per-pair decision audit trail as line-delimited JSON."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for item in annotated:
            if item.decision is None:
                continue
            handle.write(
                json.dumps(
                    {
                        "pair": list(item.decision.pair),
                        "value": item.decision.value,
                        "raw_response_digest": prompt_digest(item.decision.raw_response),
                        "cnm_origin": item.cnm_origin,
                    }
                )
                + "\n"
            )
