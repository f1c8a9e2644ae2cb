"""Signature prompt construction, response parsing, and extraction flow."""

import json

import pytest

from chop.cnm import (
    CNM,
    CNMParseError,
    build_cnm_prompt,
    extract_cnm,
    null_cnm,
    parse_cnm_response,
)
from chop.corpus import Chunk
from chop.llm_gateway import ScriptedBackend, Transcript

from doubles import SequenceGateway

AIR_CONDITIONER_JSON = json.dumps(
    {
        "category": "air conditioner",
        "nouns": ["air conditioner filter"],
        "model": "225B",
        "confidence": 0.9,
    }
)


def _chunk(text: str, chunk_id: str = "d::c0", seq: int = 0) -> Chunk:
    return Chunk(
        chunk_id=chunk_id, doc_id="d", seq_index=seq, text=text,
        token_span=(0, max(1, len(text.split()))), char_span=(0, len(text)),
    )


class TestBuildPrompt:
    def test_long_chunk_truncated_to_1000_chars(self):
        text = "x" * 1500
        prompt = build_cnm_prompt(text)
        assert "x" * 1000 in prompt
        assert "x" * 1001 not in prompt

    def test_short_chunk_fully_included(self):
        text = "y" * 200
        prompt = build_cnm_prompt(text)
        assert text in prompt

    def test_empty_chunk_gives_empty_slot(self):
        prompt = build_cnm_prompt("")
        assert prompt == build_cnm_prompt("")
        assert "{text}" not in prompt

    def test_template_demands_json_only(self):
        assert "Return JSON ONLY" in build_cnm_prompt("anything")


class TestParseResponse:
    def test_valid_full_signature(self):
        cnm = parse_cnm_response(AIR_CONDITIONER_JSON)
        assert cnm.category == "air conditioner"
        assert cnm.nouns == ("air conditioner filter",)
        assert cnm.model == "225B"
        assert cnm.confidence == 0.9

    def test_nulls_preserved(self):
        cnm = parse_cnm_response('{"category":null,"nouns":["battery"],"model":null,"confidence":0.5}')
        assert cnm.category is None
        assert cnm.model is None
        assert cnm.nouns == ("battery",)

    def test_no_json_raises(self):
        with pytest.raises(CNMParseError):
            parse_cnm_response("sure! here is the information you wanted")

    def test_code_fences_stripped(self):
        raw = "```json\n" + AIR_CONDITIONER_JSON + "\n```"
        assert parse_cnm_response(raw).model == "225B"

    def test_compound_rule_repaired_by_prefixing(self):
        cnm = parse_cnm_response('{"category":"fan","nouns":["blade"],"model":null,"confidence":0.4}')
        assert cnm.nouns[0] == "fan blade"

    def test_compound_rule_satisfied_left_alone(self):
        cnm = parse_cnm_response('{"category":"fan","nouns":["fan blade"],"model":null,"confidence":0.4}')
        assert cnm.nouns[0] == "fan blade"

    def test_category_and_nouns_lowercased_and_squeezed(self):
        raw = '{"category":" Air   Conditioner ","nouns":["Air   Conditioner  FILTER"],"model":" 225B ","confidence":1}'
        cnm = parse_cnm_response(raw)
        assert cnm.category == "air conditioner"
        assert cnm.nouns == ("air conditioner filter",)
        assert cnm.model == "225B"

    def test_two_nouns_kept_in_order(self):
        raw = '{"category":null,"nouns":["vacuum hose","nozzle"],"model":null,"confidence":0.2}'
        assert parse_cnm_response(raw).nouns == ("vacuum hose", "nozzle")

    @pytest.mark.parametrize(
        "raw",
        [
            '{"category":null,"nouns":[],"model":null,"confidence":0.5}',
            '{"category":null,"nouns":["a","b","c"],"model":null,"confidence":0.5}',
            '{"category":null,"model":null,"confidence":0.5}',
            '{"category":null,"nouns":["a"],"model":null,"confidence":1.5}',
            '{"category":null,"nouns":["a"],"model":null,"confidence":-0.1}',
            '{"category":null,"nouns":["a"],"model":null}',
            '{"category":null,"nouns":"a","model":null,"confidence":0.5}',
            '[1, 2, 3]',
        ],
    )
    def test_invalid_payloads_rejected(self, raw):
        with pytest.raises(CNMParseError):
            parse_cnm_response(raw)


class TestExtract:
    def test_scripted_transcript_returns_signature(self):
        chunk = _chunk("The 225B air conditioner filter must be cleaned monthly.")
        transcript = Transcript()
        transcript.record(build_cnm_prompt(chunk.text), AIR_CONDITIONER_JSON)
        gateway = ScriptedBackend(transcript)
        cnm = extract_cnm(chunk, gateway)
        assert cnm == CNM(
            category="air conditioner",
            nouns=("air conditioner filter",),
            model="225B",
            confidence=0.9,
        )
        assert gateway.calls == 1

    def test_invalid_then_valid_takes_two_calls(self):
        gateway = SequenceGateway(["not json at all", AIR_CONDITIONER_JSON])
        cnm = extract_cnm(_chunk("text"), gateway)
        assert cnm.model == "225B"
        assert gateway.calls == 2
        assert "could not be parsed" in gateway.prompts[1]

    def test_garbage_twice_falls_back_to_null_signature(self):
        gateway = SequenceGateway(["garbage one", "garbage two"])
        cnm = extract_cnm(_chunk("Compressor mounting bolts"), gateway)
        assert cnm == CNM(category=None, nouns=("compressor",), model=None, confidence=0.0)
        assert gateway.calls == 2

    def test_at_most_two_gateway_calls(self):
        gateway = SequenceGateway(["bad", "also bad", "never used"])
        extract_cnm(_chunk("anything here"), gateway)
        assert gateway.calls == 2

    def test_fallback_on_symbol_only_chunk(self):
        gateway = SequenceGateway(["bad", "bad"])
        cnm = extract_cnm(_chunk("!!! ???"), gateway)
        assert cnm.nouns == ("unknown",)

    def test_deterministic_under_fixed_transcript(self):
        chunk = _chunk("Some chunk body.")
        transcript = Transcript()
        transcript.record(build_cnm_prompt(chunk.text), AIR_CONDITIONER_JSON)
        first = extract_cnm(chunk, ScriptedBackend(transcript))
        second = extract_cnm(chunk, ScriptedBackend(transcript))
        assert first == second

    def test_returned_signatures_satisfy_invariants(self):
        # Any parseable reply must come back with 1-2 nouns, confidence in
        # range, and the compound rule holding whenever category is set.
        samples = [
            '{"category":"boat","nouns":["hull"],"model":"X-SERIES","confidence":0.7}',
            '{"category":null,"nouns":["anchor","rope"],"model":null,"confidence":0.0}',
            '{"category":"camera","nouns":["camera lens","cap"],"model":"D7","confidence":1.0}',
        ]
        for raw in samples:
            cnm = extract_cnm(_chunk("body"), SequenceGateway([raw]))
            assert 1 <= len(cnm.nouns) <= 2
            assert 0.0 <= cnm.confidence <= 1.0
            if cnm.category is not None:
                assert cnm.nouns[0].startswith(cnm.category + " ")

    def test_null_cnm_round_trip_dict(self):
        cnm = null_cnm("Widget text")
        assert CNM.from_dict(cnm.to_dict()) == cnm
