"""Context-preserving chunking, retrieval, and evaluation for stitched corpora."""

from .cnm import CNM, build_cnm_prompt, extract_cnm, parse_cnm_response
from .composer import EmbeddingVector, HashEmbedder, compose, render_prefix
from .config import PipelineConfig, load_config
from .continuity import AnnotatedChunk, ContinuityDecision, decide_continuity, run_chain
from .corpus import (
    Chunk,
    Document,
    Sentence,
    chunk_cosine,
    chunk_fixed,
    load_corpus,
    split_sentences,
    stitch_documents,
)
from .evalkit import (
    MetricReport,
    QueryRecord,
    hit_at_k,
    mrr_at_k,
    ndcg_at_k,
    rouge_l,
    sem_score,
    token_f1,
)
from .llm_gateway import ChatRequest, ChatResponse, ScriptedBackend, Transcript
from .pipeline import ingest, run_compare, run_generate, run_query
from .vecstore import IndexedChunk, SearchHit, VectorStore

__version__ = "0.1.0"

__all__ = [
    "CNM",
    "AnnotatedChunk",
    "ChatRequest",
    "ChatResponse",
    "Chunk",
    "ContinuityDecision",
    "Document",
    "EmbeddingVector",
    "HashEmbedder",
    "IndexedChunk",
    "MetricReport",
    "PipelineConfig",
    "QueryRecord",
    "ScriptedBackend",
    "SearchHit",
    "Sentence",
    "Transcript",
    "VectorStore",
    "build_cnm_prompt",
    "chunk_cosine",
    "chunk_fixed",
    "compose",
    "decide_continuity",
    "extract_cnm",
    "hit_at_k",
    "ingest",
    "load_config",
    "load_corpus",
    "mrr_at_k",
    "ndcg_at_k",
    "parse_cnm_response",
    "render_prefix",
    "rouge_l",
    "run_chain",
    "run_compare",
    "run_generate",
    "run_query",
    "sem_score",
    "split_sentences",
    "stitch_documents",
    "token_f1",
]
