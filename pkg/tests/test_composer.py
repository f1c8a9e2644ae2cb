"""Prefix rendering, composition, and the embedding backends."""

import hashlib

import numpy as np
import pytest

from chop.cnm import CNM
from chop.composer import (
    EmbeddingError,
    HashEmbedder,
    RemoteEmbedder,
    compose,
    recover_chunk_text,
    render_prefix,
)
from chop.corpus import Chunk

from stub_llm import StubChatServer

FULL_CNM = CNM(
    category="air conditioner", nouns=("air conditioner filter",), model="225B", confidence=0.9
)
NULL_CNM = CNM(category=None, nouns=(), model=None, confidence=0.0)


def _chunk(text: str) -> Chunk:
    return Chunk(chunk_id="d::c0", doc_id="d", seq_index=0, text=text,
                 token_span=(0, 1), char_span=(0, len(text)))


class TestRenderPrefix:
    def test_full_signature(self):
        assert render_prefix(FULL_CNM) == (
            "[category: air conditioner] [nouns: air conditioner filter] [model: 225B]"
        )

    def test_all_null_renders_empty(self):
        assert render_prefix(NULL_CNM) == ""

    def test_two_nouns_joined_in_order(self):
        cnm = CNM(category=None, nouns=("vacuum hose", "nozzle"), model=None, confidence=0.1)
        assert render_prefix(cnm) == "[nouns: vacuum hose; nozzle]"

    def test_null_fields_omitted_entirely(self):
        cnm = CNM(category=None, nouns=("battery",), model="X-SERIES", confidence=0.2)
        assert render_prefix(cnm) == "[nouns: battery] [model: X-SERIES]"

    def test_deterministic(self):
        assert render_prefix(FULL_CNM) == render_prefix(FULL_CNM)


class TestCompose:
    def test_prefix_newline_body(self):
        chunk = _chunk("The body text.")
        composed = compose(FULL_CNM, chunk)
        assert composed.x_text == render_prefix(FULL_CNM) + "\n" + "The body text."
        assert composed.prefix == render_prefix(FULL_CNM)
        assert composed.chunk_ref == chunk.chunk_id

    def test_null_signature_leaves_text_unchanged(self):
        chunk = _chunk("Untouched body.")
        composed = compose(NULL_CNM, chunk)
        assert composed.x_text == "Untouched body."
        assert composed.prefix == ""

    def test_two_signatures_differ_only_in_prefix(self):
        chunk = _chunk("Shared body.")
        other = CNM(category="fan", nouns=("fan blade",), model="F2", confidence=0.3)
        a = compose(FULL_CNM, chunk)
        b = compose(other, chunk)
        assert a.x_text != b.x_text
        assert a.x_text.endswith("Shared body.")
        assert b.x_text.endswith("Shared body.")
        assert recover_chunk_text(a.x_text, len(a.prefix)) == recover_chunk_text(
            b.x_text, len(b.prefix)
        )

    def test_suffix_recovery(self):
        chunk = _chunk("Recover me.")
        for cnm in (FULL_CNM, NULL_CNM):
            composed = compose(cnm, chunk)
            assert recover_chunk_text(composed.x_text, len(composed.prefix)) == "Recover me."


class TestHashEmbedder:
    def test_identical_texts_identical_vectors(self):
        embedder = HashEmbedder(dimension=64, seed=13)
        a = embedder.embed("the quick brown fox")
        b = embedder.embed("the quick brown fox")
        assert np.array_equal(a.values, b.values)

    def test_single_repeated_term_one_bucket_unit_norm(self):
        # Independent oracle: recompute the bucket and sign straight from
        # blake2b, without going through the embedder's own helper.
        embedder = HashEmbedder(dimension=32, seed=7)
        digest = hashlib.blake2b(b"filter", digest_size=8, salt=b"7").digest()
        value = int.from_bytes(digest, "big")
        expected_sign = 1.0 if value & 1 else -1.0
        expected_bucket = (value >> 1) % 32

        vec = embedder.embed("filter filter filter").values
        assert np.count_nonzero(vec) == 1
        assert vec[expected_bucket] == pytest.approx(expected_sign)
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-9)

    def test_disjoint_vocabulary_non_colliding_buckets_cosine_zero(self):
        embedder = HashEmbedder(dimension=128, seed=13)
        left = ["compressor", "bracket"]
        right = ["warranty", "registration"]
        # Brute-force check that the chosen terms occupy distinct buckets.
        buckets = {}
        for term in left + right:
            digest = hashlib.blake2b(term.encode(), digest_size=8, salt=b"13").digest()
            value = int.from_bytes(digest, "big")
            buckets[term] = (value >> 1) % 128
        assert len(set(buckets.values())) == 4, "bucket collision; pick different terms"

        a = embedder.embed(" ".join(left)).values
        b = embedder.embed(" ".join(right)).values
        assert float(a @ b) == pytest.approx(0.0, abs=1e-12)

    def test_empty_text_rejected(self):
        embedder = HashEmbedder(dimension=16, seed=1)
        with pytest.raises(EmbeddingError):
            embedder.embed("")
        with pytest.raises(EmbeddingError):
            embedder.embed("!!! ...")

    def test_all_vectors_unit_norm(self):
        embedder = HashEmbedder(dimension=512, seed=13)
        texts = [
            "one",
            "a longer text with many words repeated words repeated",
            "numbers 123 456 mixed WITH case",
        ]
        for text in texts:
            assert abs(embedder.embed(text).norm - 1.0) < 1e-9

    def test_order_insensitive(self):
        embedder = HashEmbedder(dimension=64, seed=2)
        assert np.array_equal(
            embedder.embed("alpha beta gamma").values,
            embedder.embed("gamma alpha beta").values,
        )

    def test_prefix_injection_separates_identical_bodies(self):
        embedder = HashEmbedder(dimension=256, seed=13)
        chunk = _chunk("identical boilerplate body text for both manuals")
        cnm_a = CNM(category="fan", nouns=("fan blade",), model="F100", confidence=0.9)
        cnm_b = CNM(category="fan", nouns=("fan motor",), model="G200", confidence=0.9)
        va = embedder.embed(compose(cnm_a, chunk).x_text).values
        vb = embedder.embed(compose(cnm_b, chunk).x_text).values
        assert float(va @ vb) < 1.0

    def test_different_seeds_differ(self):
        a = HashEmbedder(dimension=64, seed=1).embed("term")
        b = HashEmbedder(dimension=64, seed=2).embed("term")
        assert not np.array_equal(a.values, b.values)

    def test_descriptor(self):
        assert HashEmbedder(dimension=64, seed=9).descriptor() == {
            "backend": "hash", "dimension": 64, "seed": 9,
        }


def _embedding_payload(batch, dimension):
    data = []
    for i, text in enumerate(batch):
        rng = np.random.default_rng(abs(hash(text)) % (2**32))
        data.append({"index": i, "embedding": rng.normal(size=dimension).tolist()})
    return {"data": data}


class TestRemoteEmbedder:
    def test_batches_of_at_most_64(self):
        batch_sizes = []

        def responder(body, index):
            batch_sizes.append(len(body["input"]))
            return 200, _embedding_payload(body["input"], 8)

        with StubChatServer(responder) as server:
            embedder = RemoteEmbedder(endpoint=server.endpoint, model="emb", dimension=8)
            vectors = embedder.embed_batch([f"text {i}" for i in range(130)])
        assert len(vectors) == 130
        assert batch_sizes == [64, 64, 2]

    def test_vectors_normalized_and_in_order(self):
        def responder(body, index):
            data = [
                {"index": i, "embedding": [float(i + 1), 0.0, 0.0, 0.0]}
                for i in range(len(body["input"]))
            ]
            return 200, {"data": data}

        with StubChatServer(responder) as server:
            embedder = RemoteEmbedder(endpoint=server.endpoint, model="emb", dimension=4)
            vectors = embedder.embed_batch(["a", "b"])
        for vec in vectors:
            assert abs(vec.norm - 1.0) < 1e-9
        assert vectors[0].values[0] == pytest.approx(1.0)

    def test_dimension_mismatch_rejected(self):
        def responder(body, index):
            return 200, {"data": [{"index": 0, "embedding": [1.0, 2.0]}]}

        with StubChatServer(responder) as server:
            embedder = RemoteEmbedder(endpoint=server.endpoint, model="emb", dimension=4)
            with pytest.raises(EmbeddingError, match="4-dim"):
                embedder.embed("x")

    def test_retries_on_500(self):
        def responder(body, index):
            if index == 0:
                return 500, None
            return 200, _embedding_payload(body["input"], 4)

        with StubChatServer(responder) as server:
            embedder = RemoteEmbedder(
                endpoint=server.endpoint, model="emb", dimension=4, backoff=0.0
            )
            assert embedder.embed("hello").d == 4
            assert server.calls == 2

    def test_empty_text_rejected_before_call(self):
        embedder = RemoteEmbedder(endpoint="http://127.0.0.1:9/none", model="emb", dimension=4)
        with pytest.raises(EmbeddingError):
            embedder.embed("   ")
