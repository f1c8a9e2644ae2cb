"""In-process vector store: exact cosine search, HNSW approximate search,
and checksummed binary persistence.

Search results order by score descending with ties broken by insertion
order, so identical stores always return identical rankings.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .composer import EmbeddingVector
from .hnsw import HNSWGraph

MAGIC = b"CHPV"
FORMAT_VERSION = 1

HNSW_DEFAULT_M = 16
HNSW_DEFAULT_EF_CONSTRUCTION = 200
HNSW_DEFAULT_EF_SEARCH = 64
HNSW_DEFAULT_SEED = 1337


class StoreError(RuntimeError):
    pass


@dataclass(frozen=True)
class IndexedChunk:
    id: str
    x_text: str
    vector: EmbeddingVector
    metadata: dict


@dataclass(frozen=True)
class SearchHit:
    id: str
    score: float
    rank: int


def hits_to_jsonl(hits: list[SearchHit]) -> str:
    """Serialize a hit list as line-delimited JSON {id, score} for diffing."""
    return "".join(json.dumps({"id": h.id, "score": h.score}) + "\n" for h in hits)


class VectorStore:
    def __init__(self, dimension: int, metadata: dict | None = None) -> None:
        if dimension < 1:
            raise StoreError(f"dimension must be >= 1, got {dimension}")
        self.dimension = dimension
        self.metadata: dict = dict(metadata or {})
        self._ids: list[str] = []
        self._id_to_idx: dict[str, int] = {}
        self._x_texts: list[str] = []
        self._item_meta: list[dict] = []
        self._capacity = 256
        self._matrix = np.zeros((self._capacity, dimension), dtype=np.float64)
        self._ann: HNSWGraph | None = None

    def __len__(self) -> int:
        return len(self._ids)

    def insert(self, item: IndexedChunk) -> None:
        values = np.asarray(item.vector.values, dtype=np.float64)
        if values.shape != (self.dimension,):
            raise StoreError(
                f"vector dimension {values.shape[0] if values.ndim == 1 else values.shape} "
                f"does not match store dimension {self.dimension}"
            )
        if item.id in self._id_to_idx:
            raise StoreError(f"duplicate id: {item.id!r}")
        idx = len(self._ids)
        if idx >= self._capacity:
            self._capacity = max(self._capacity * 2, idx + 1)
            grown = np.zeros((self._capacity, self.dimension), dtype=np.float64)
            grown[:idx] = self._matrix[:idx]
            self._matrix = grown
        self._matrix[idx] = values
        self._ids.append(item.id)
        self._id_to_idx[item.id] = idx
        self._x_texts.append(item.x_text)
        self._item_meta.append(dict(item.metadata))
        self._ann = None  # any mutation invalidates the built graph

    def get(self, item_id: str) -> IndexedChunk:
        idx = self._id_to_idx.get(item_id)
        if idx is None:
            raise StoreError(f"unknown id: {item_id!r}")
        values = self._matrix[idx].copy()
        return IndexedChunk(
            id=item_id,
            x_text=self._x_texts[idx],
            vector=EmbeddingVector(values=values, d=self.dimension),
            metadata=dict(self._item_meta[idx]),
        )

    def item_metadata(self, item_id: str) -> dict:
        idx = self._id_to_idx.get(item_id)
        if idx is None:
            raise StoreError(f"unknown id: {item_id!r}")
        return dict(self._item_meta[idx])

    def x_text(self, item_id: str) -> str:
        idx = self._id_to_idx.get(item_id)
        if idx is None:
            raise StoreError(f"unknown id: {item_id!r}")
        return self._x_texts[idx]

    def _check_query(self, query) -> np.ndarray:
        values = np.asarray(
            query.values if isinstance(query, EmbeddingVector) else query, dtype=np.float64
        )
        if values.shape != (self.dimension,):
            raise StoreError(
                f"query dimension {values.shape} does not match store dimension {self.dimension}"
            )
        return values

    def search_exact(self, query, k: int) -> list[SearchHit]:
        """Exhaustive cosine scan; ties break by ascending insertion order."""
        if k < 1:
            raise StoreError(f"k must be >= 1, got {k}")
        if not self._ids:
            raise StoreError("store is empty")
        q = self._check_query(query)
        qnorm = float(np.linalg.norm(q))
        n = len(self._ids)
        matrix = self._matrix[:n]
        norms = np.linalg.norm(matrix, axis=1)
        denom = norms * qnorm
        denom[denom == 0.0] = 1.0
        scores = (matrix @ q) / denom
        order = np.argsort(-scores, kind="stable")[: min(k, n)]
        return [
            SearchHit(id=self._ids[int(i)], score=float(scores[int(i)]), rank=rank)
            for rank, i in enumerate(order, start=1)
        ]

    def build_ann(
        self,
        m: int = HNSW_DEFAULT_M,
        ef_construction: int = HNSW_DEFAULT_EF_CONSTRUCTION,
        seed: int = HNSW_DEFAULT_SEED,
    ) -> None:
        """Build the HNSW graph over the current contents (exclusive step)."""
        if not self._ids:
            raise StoreError("cannot build an ANN index over an empty store")
        n = len(self._ids)
        self._ann = HNSWGraph(self._matrix[:n], m=m, ef_construction=ef_construction, seed=seed)

    @property
    def ann_built(self) -> bool:
        return self._ann is not None

    def search_ann(self, query, k: int, ef_search: int = HNSW_DEFAULT_EF_SEARCH) -> list[SearchHit]:
        """Approximate top-k via the HNSW graph; scores are exact cosines."""
        if k < 1:
            raise StoreError(f"k must be >= 1, got {k}")
        if self._ann is None:
            raise StoreError("ANN index not built; call build_ann() first")
        q = self._check_query(query)
        limit = min(k, len(self._ids))
        candidate_idx = self._ann.search(q, max(ef_search, limit))
        qnorm = float(np.linalg.norm(q))
        hits: list[tuple[float, int]] = []
        for idx in candidate_idx:
            vec = self._matrix[idx]
            denom = float(np.linalg.norm(vec)) * qnorm
            score = float(vec @ q / denom) if denom else 0.0
            hits.append((score, idx))
        hits.sort(key=lambda t: (-t[0], t[1]))
        return [
            SearchHit(id=self._ids[idx], score=score, rank=rank)
            for rank, (score, idx) in enumerate(hits[:limit], start=1)
        ]

    # --- persistence -----------------------------------------------------

    def _payload(self) -> bytes:
        header = json.dumps(
            {"dimension": self.dimension, "count": len(self._ids), "metadata": self.metadata},
            sort_keys=True,
        ).encode("utf-8")
        parts = [struct.pack("<I", len(header)), header]
        for idx, item_id in enumerate(self._ids):
            record = json.dumps(
                {"id": item_id, "x_text": self._x_texts[idx], "metadata": self._item_meta[idx]},
                sort_keys=True,
            ).encode("utf-8")
            vector_bytes = self._matrix[idx].astype("<f8").tobytes()
            parts.append(struct.pack("<I", len(record)))
            parts.append(record)
            parts.append(vector_bytes)
        return b"".join(parts)

    def content_digest(self) -> str:
        return hashlib.sha256(self._payload()).hexdigest()

    def persist(self, path: str | Path) -> None:
        path = Path(path)
        payload = self._payload()
        blob = MAGIC + struct.pack("<I", FORMAT_VERSION) + hashlib.sha256(payload).digest() + payload
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path, expected_embedder: dict | None = None) -> "VectorStore":
        path = Path(path)
        blob = path.read_bytes()
        if len(blob) < 40 or blob[:4] != MAGIC:
            raise StoreError(f"{path}: not a vector store file")
        (version,) = struct.unpack("<I", blob[4:8])
        if version != FORMAT_VERSION:
            raise StoreError(f"{path}: unsupported format version {version}")
        checksum = blob[8:40]
        payload = blob[40:]
        if hashlib.sha256(payload).digest() != checksum:
            raise StoreError(f"{path}: checksum mismatch (corrupt or truncated file)")

        offset = 0
        (header_len,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        header = json.loads(payload[offset:offset + header_len].decode("utf-8"))
        offset += header_len
        store = cls(dimension=header["dimension"], metadata=header.get("metadata", {}))
        vector_bytes = store.dimension * 8
        for _ in range(header["count"]):
            (record_len,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            record = json.loads(payload[offset:offset + record_len].decode("utf-8"))
            offset += record_len
            values = np.frombuffer(payload[offset:offset + vector_bytes], dtype="<f8").copy()
            offset += vector_bytes
            store.insert(
                IndexedChunk(
                    id=record["id"],
                    x_text=record["x_text"],
                    vector=EmbeddingVector(values=values, d=store.dimension),
                    metadata=record["metadata"],
                )
            )
        if expected_embedder is not None:
            stored = store.metadata.get("embedder")
            if stored != expected_embedder:
                warnings.warn(
                    f"store {path} was built with embedder {stored}, expected {expected_embedder}",
                    UserWarning,
                    stacklevel=2,
                )
        return store
