"""Signature-prefix composition and text embedding.

A chunk's retrieval text is its rendered signature prefix joined to the raw
chunk body; the composed text is what gets embedded. Embedding backends are
pluggable: a deterministic signed feature-hash embedder for offline use, and
an HTTP backend speaking the common embeddings wire shape.
"""

from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass

import numpy as np
import requests

from .cnm import CNM
from .corpus import Chunk

PREFIX_FORMAT_VERSION = "pfx-v1"
PREFIX_SEPARATOR = "\n"

_WORD_RE = re.compile(r"\w+")


@dataclass(frozen=True)
class ComposedChunk:
    chunk_ref: str
    prefix: str
    x_text: str
    cnm: CNM


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    d: int

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


class EmbeddingError(RuntimeError):
    pass


def render_prefix(cnm: CNM) -> str:
    """Render the signature as one bracketed key-value line.

    Null fields are omitted entirely; an all-null signature renders as "".
    """
    parts: list[str] = []
    if cnm.category is not None:
        parts.append(f"[category: {cnm.category}]")
    if cnm.nouns:
        parts.append(f"[nouns: {'; '.join(cnm.nouns)}]")
    if cnm.model is not None:
        parts.append(f"[model: {cnm.model}]")
    return " ".join(parts)


def compose(cnm: CNM, chunk: Chunk) -> ComposedChunk:
    """Prepend the rendered prefix to the chunk body.

    With an empty prefix the composed text is the chunk text unchanged, so
    the body is always recoverable as the suffix past the prefix length.
    """
    prefix = render_prefix(cnm)
    x_text = prefix + PREFIX_SEPARATOR + chunk.text if prefix else chunk.text
    return ComposedChunk(chunk_ref=chunk.chunk_id, prefix=prefix, x_text=x_text, cnm=cnm)


def recover_chunk_text(x_text: str, prefix_length: int) -> str:
    """Invert compose(): drop the prefix and separator from a composed text."""
    if prefix_length == 0:
        return x_text
    return x_text[prefix_length + len(PREFIX_SEPARATOR):]


class HashEmbedder:
    """Signed feature hashing over lowercased word tokens.

    Order-insensitive and fully deterministic for a given (dimension, seed):
    each token is hashed to one bucket with a +/-1 sign, counts accumulate,
    and the vector is normalized to unit Euclidean norm.
    """

    backend_name = "hash"

    def __init__(self, dimension: int = 512, seed: int = 13) -> None:
        if dimension < 2:
            raise ValueError(f"dimension must be >= 2, got {dimension}")
        self.dimension = dimension
        self.seed = seed

    def bucket_and_sign(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(
            token.encode("utf-8"), digest_size=8, salt=str(self.seed).encode("utf-8")[:16]
        ).digest()
        value = int.from_bytes(digest, "big")
        sign = 1.0 if value & 1 else -1.0
        return (value >> 1) % self.dimension, sign

    def embed(self, text: str) -> EmbeddingVector:
        tokens = _WORD_RE.findall(text.lower())
        if not tokens:
            raise EmbeddingError("cannot embed text with no word tokens")
        values = np.zeros(self.dimension, dtype=np.float64)
        for token in tokens:
            bucket, sign = self.bucket_and_sign(token)
            values[bucket] += sign
        norm = float(np.linalg.norm(values))
        if norm == 0.0:
            # Signed counts cancelled out exactly; fall back to unsigned counts.
            for token in tokens:
                bucket, _ = self.bucket_and_sign(token)
                values[bucket] += 1.0
            norm = float(np.linalg.norm(values))
        return EmbeddingVector(values=values / norm, d=self.dimension)

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self.embed(t) for t in texts]

    def descriptor(self) -> dict:
        return {"backend": self.backend_name, "dimension": self.dimension, "seed": self.seed}


class RemoteEmbedder:
    """HTTP embeddings backend: JSON {model, input: [...]} -> vectors in order.

    Requests are batched (at most ``batch_size`` texts per call) and each
    returned vector is normalized to unit Euclidean norm.
    """

    backend_name = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int = 3072,
        api_key: str | None = None,
        batch_size: int = 64,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.api_key = api_key
        self.batch_size = batch_size
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        if any(not t.strip() for t in texts):
            raise EmbeddingError("cannot embed empty text")
        out: list[EmbeddingVector] = []
        for start in range(0, len(texts), self.batch_size):
            out.extend(self._call(texts[start:start + self.batch_size]))
        return out

    def _call(self, batch: list[str]) -> list[EmbeddingVector]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model, "input": batch}
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                response = requests.post(
                    self.endpoint, json=body, headers=headers, timeout=self.timeout
                )
                if response.status_code >= 500:
                    last_error = EmbeddingError(f"server error {response.status_code}")
                elif response.status_code >= 400:
                    raise EmbeddingError(f"embedding request rejected: {response.status_code}")
                else:
                    return self._parse(response.json(), len(batch))
            except requests.RequestException as exc:
                last_error = exc
            if attempt < self.max_attempts - 1:
                time.sleep(self.backoff * (2 ** attempt))
        raise EmbeddingError(f"embedding failed after {self.max_attempts} attempts: {last_error}")

    def _parse(self, payload: dict, expected: int) -> list[EmbeddingVector]:
        rows = payload.get("data")
        if not isinstance(rows, list) or len(rows) != expected:
            raise EmbeddingError("embedding response shape mismatch")
        vectors: list[EmbeddingVector] = []
        for row in sorted(rows, key=lambda r: r.get("index", 0)):
            values = np.asarray(row.get("embedding"), dtype=np.float64)
            if values.shape != (self.dimension,):
                raise EmbeddingError(
                    f"expected {self.dimension}-dim vector, got shape {values.shape}"
                )
            norm = float(np.linalg.norm(values))
            if norm == 0.0 or not np.all(np.isfinite(values)):
                raise EmbeddingError("non-finite or zero embedding returned")
            vectors.append(EmbeddingVector(values=values / norm, d=self.dimension))
        return vectors

    def descriptor(self) -> dict:
        return {
            "backend": self.backend_name,
            "dimension": self.dimension,
            "endpoint": self.endpoint,
            "model": self.model,
        }
