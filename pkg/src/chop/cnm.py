"""Category/Nouns/Model signature extraction.

Each chunk is summarized by a compact {category, nouns, model} signature
obtained from the chat model through a strict JSON-only prompt. Parse or
validation failures get one corrective re-prompt; after that a null-signature
fallback keeps the pipeline moving.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

from .corpus import Chunk
from .llm_gateway import ChatRequest
from .prompts import load_prompt

logger = logging.getLogger(__name__)

CNM_PROMPT_VERSION = "cnm_extract_v1"
CNM_INPUT_CHAR_CAP = 1000

_FIRST_WORD_RE = re.compile(r"\w+")


class CNMParseError(ValueError):
    """Model output could not be parsed into a valid signature."""


@dataclass(frozen=True)
class CNM:
    category: str | None
    nouns: tuple[str, ...]
    model: str | None
    confidence: float

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "nouns": list(self.nouns),
            "model": self.model,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CNM":
        return cls(
            category=data.get("category"),
            nouns=tuple(data.get("nouns") or ()),
            model=data.get("model"),
            confidence=float(data.get("confidence", 0.0)),
        )


def null_cnm(chunk_text: str) -> CNM:
    """Fallback signature: no category/model, first content word as the noun."""
    match = _FIRST_WORD_RE.search(chunk_text)
    noun = match.group(0).lower() if match else "unknown"
    return CNM(category=None, nouns=(noun,), model=None, confidence=0.0)


def build_cnm_prompt(chunk_text: str) -> str:
    """Fill the extraction template with the first 1000 characters of the chunk."""
    template = load_prompt(CNM_PROMPT_VERSION)
    return template.replace("{text}", chunk_text[:CNM_INPUT_CHAR_CAP])


def parse_cnm_response(raw: str) -> CNM:
    """Parse a strict-JSON extraction reply into a validated signature.

    Code fences and any other leading/trailing non-JSON text are stripped.
    Category and noun labels are lower-cased and whitespace-normalized; the
    model label keeps its case. A first noun that is not prefixed by the
    category is repaired by prepending it.
    """
    data = _extract_json_object(raw)

    category = _clean_label(data.get("category"), lowercase=True)
    model = _clean_label(data.get("model"), lowercase=False)

    raw_nouns = data.get("nouns")
    if raw_nouns is None:
        raw_nouns = []
    if not isinstance(raw_nouns, list):
        raise CNMParseError("'nouns' must be a JSON array")
    nouns = [_clean_label(n, lowercase=True) for n in raw_nouns]
    nouns = [n for n in nouns if n]
    if not 1 <= len(nouns) <= 2:
        raise CNMParseError(f"'nouns' must contain 1 or 2 entries, got {len(nouns)}")

    confidence = data.get("confidence")
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise CNMParseError("'confidence' must be a number")
    confidence = float(confidence)
    if not 0.0 <= confidence <= 1.0:
        raise CNMParseError(f"'confidence' must lie in [0, 1], got {confidence}")

    if category is not None and not nouns[0].startswith(category + " "):
        nouns[0] = f"{category} {nouns[0]}"

    return CNM(category=category, nouns=tuple(nouns), model=model, confidence=confidence)


def extract_cnm(chunk: Chunk, gateway) -> CNM:
    """Extract the chunk's signature, with one corrective retry then fallback.

    Issues at most two gateway calls per chunk.
    """
    prompt = build_cnm_prompt(chunk.text)
    response = gateway.complete(ChatRequest(prompt=prompt))
    try:
        return parse_cnm_response(response.text)
    except CNMParseError as first_error:
        corrective = (
            f"{prompt}\n\nYour previous reply could not be parsed: {first_error}\n"
            "Return JSON ONLY."
        )
        retry = gateway.complete(ChatRequest(prompt=corrective))
        try:
            return parse_cnm_response(retry.text)
        except CNMParseError as second_error:
            logger.warning(
                "signature extraction failed twice for chunk %s (%s); using null fallback",
                chunk.chunk_id,
                second_error,
            )
            return null_cnm(chunk.text)


def _extract_json_object(raw: str) -> dict:
    start = raw.find("{")
    end = raw.rfind("}")
    if start == -1 or end == -1 or end <= start:
        raise CNMParseError("no JSON object found in response")
    try:
        data = json.loads(raw[start:end + 1])
    except json.JSONDecodeError as exc:
        raise CNMParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CNMParseError("response JSON is not an object")
    return data


def _clean_label(value, lowercase: bool) -> str | None:
    if value is None:
        return None
    if not isinstance(value, str):
        raise CNMParseError(f"expected string or null label, got {type(value).__name__}")
    cleaned = " ".join(value.split())
    if not cleaned:
        return None
    return cleaned.lower() if lowercase else cleaned
