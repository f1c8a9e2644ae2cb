"""End-to-end orchestration: ingest, query, generate, compare.

Every strategy in a compare run shares one retrieval stack (embedder, store,
similarity); only how chunks are composed differs. Ingest persists nothing
until all stages succeed, and writes a manifest recording the config, corpus
digest, and per-stage counters alongside the index.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import composer, continuity, corpus, evalkit, vecstore
from .cnm import CNM, CNM_PROMPT_VERSION, extract_cnm
from .composer import PREFIX_FORMAT_VERSION
from .config import PipelineConfig
from .continuity import CD_PROMPT_VERSION
from .llm_gateway import ChatRequest, RecordingBackend, RemoteBackend, ScriptedBackend, Transcript
from .prompts import load_prompt

logger = logging.getLogger(__name__)

ANSWER_PROMPT_VERSION = "answer_generate_v1"

PROMPT_VERSIONS = {
    "cnm": CNM_PROMPT_VERSION,
    "continuity": CD_PROMPT_VERSION,
    "answer": ANSWER_PROMPT_VERSION,
}


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, cause: Exception | None = None) -> None:
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage
        self.cause = cause


def _stage(stage: str, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, str(exc), cause=exc) from exc


def build_embedder(config: PipelineConfig):
    if config.embedder_backend == "hash":
        return composer.HashEmbedder(dimension=config.embedder_dimension, seed=config.embedder_seed)
    if config.embedder_backend == "remote":
        if not config.embedder_endpoint or not config.embedder_model:
            raise PipelineError("configure", "remote embedder needs endpoint and model")
        return composer.RemoteEmbedder(
            endpoint=config.embedder_endpoint,
            model=config.embedder_model,
            dimension=config.embedder_dimension,
            api_key=os.environ.get(config.api_key_env),
        )
    raise PipelineError("configure", f"unknown embedder backend {config.embedder_backend!r}")


def build_gateway(config: PipelineConfig):
    if config.gateway_backend == "scripted":
        if not config.transcript_path:
            raise PipelineError("configure", "scripted gateway needs transcript_path")
        return ScriptedBackend(Transcript.load(config.transcript_path))
    if config.gateway_backend == "remote":
        if not config.gateway_endpoint or not config.gateway_model:
            raise PipelineError("configure", "remote gateway needs endpoint and model")
        backend = RemoteBackend(
            endpoint=config.gateway_endpoint,
            model=config.gateway_model,
            api_key_env=config.api_key_env,
        )
        if config.record_transcript:
            return RecordingBackend(backend, config.record_transcript)
        return backend
    raise PipelineError("configure", f"unknown gateway backend {config.gateway_backend!r}")


@dataclass
class IngestResult:
    index_path: Path
    manifest_path: Path
    counters: dict
    store_digest: str


def ingest(config: PipelineConfig) -> IngestResult:
    """Build and persist one index for the configured strategy."""
    if not config.corpus_path:
        raise PipelineError("configure", "corpus_path is required")
    if not config.index_path:
        raise PipelineError("configure", "index_path is required")

    started_at = datetime.now(timezone.utc).isoformat()
    corpus_bytes = _stage("load_corpus", Path(config.corpus_path).read_bytes)
    corpus_digest = hashlib.sha256(corpus_bytes).hexdigest()
    docs = _stage("load_corpus", corpus.load_corpus, config.corpus_path)
    stitched = _stage("stitch", corpus.stitch_documents, docs, config.stitch_joiner)
    embedder = build_embedder(config)

    counters = {
        "documents": len(docs),
        "chunks": 0,
        "extractions": 0,
        "decisions": 0,
        "embeddings": 0,
    }

    if config.strategy == "CHOP":
        chunks = _stage(
            "chunk", corpus.chunk_fixed, stitched,
            config.effective_chunk_size(), config.effective_chunk_overlap(),
        )
        gateway = build_gateway(config)

        def counting_extractor(chunk: corpus.Chunk) -> CNM:
            counters["extractions"] += 1
            try:
                return extract_cnm(chunk, gateway)
            except Exception as exc:
                raise PipelineError("extract_cnm", f"chunk {chunk.chunk_id}: {exc}", cause=exc) from exc

        def counting_decider(prev: corpus.Chunk, cur: corpus.Chunk):
            counters["decisions"] += 1
            try:
                return continuity.decide_continuity(prev, cur, gateway, config.anchor_cap)
            except Exception as exc:
                raise PipelineError(
                    "decide_continuity", f"pair ({prev.chunk_id}, {cur.chunk_id}): {exc}", cause=exc
                ) from exc

        annotated = _stage(
            "continuity_chain", continuity.run_chain, chunks, gateway,
            config.anchor_cap, counting_extractor, counting_decider,
        )
        composed = [composer.compose(a.cnm, a.chunk) for a in annotated]
        texts = [c.x_text for c in composed]
        items_meta = [
            {
                "doc_id": a.chunk.doc_id,
                "seq_index": a.chunk.seq_index,
                "cnm": a.cnm.to_dict(),
                "cnm_origin": a.cnm_origin,
                "strategy": config.strategy,
                "prefix_length": len(c.prefix),
                "char_span": list(a.chunk.char_span),
                "token_span": list(a.chunk.token_span),
            }
            for a, c in zip(annotated, composed)
        ]
        chunk_ids = [a.chunk.chunk_id for a in annotated]
        audit = annotated
    else:
        if config.strategy == "NAIVE_500T":
            chunks = _stage(
                "chunk", corpus.chunk_fixed, stitched,
                config.effective_chunk_size(), config.effective_chunk_overlap(),
            )
        else:  # COSINE_CHUNKING
            chunks = _stage(
                "chunk", corpus.chunk_cosine, stitched, config.cosine_threshold,
                lambda text: embedder.embed(text).values,
            )
        texts = [c.text for c in chunks]
        items_meta = [
            {
                "doc_id": c.doc_id,
                "seq_index": c.seq_index,
                "cnm": None,
                "strategy": config.strategy,
                "prefix_length": 0,
                "char_span": list(c.char_span),
                "token_span": list(c.token_span),
            }
            for c in chunks
        ]
        chunk_ids = [c.chunk_id for c in chunks]
        audit = None

    counters["chunks"] = len(chunk_ids)
    vectors = _embed_all(embedder, texts, chunk_ids)
    counters["embeddings"] = len(vectors)

    store = vecstore.VectorStore(
        dimension=config.embedder_dimension,
        metadata={
            "embedder": config.embedder_descriptor(),
            "strategy": config.strategy,
            "prefix_format": PREFIX_FORMAT_VERSION,
            "prompt_versions": PROMPT_VERSIONS,
        },
    )
    for item_id, text, vector, meta in zip(chunk_ids, texts, vectors, items_meta):
        _stage(
            "index", store.insert,
            vecstore.IndexedChunk(id=item_id, x_text=text, vector=vector, metadata=meta),
        )

    index_path = Path(config.index_path)
    index_path.parent.mkdir(parents=True, exist_ok=True)
    _stage("persist", store.persist, index_path)
    if audit is not None:
        continuity.write_audit_log(audit, index_path.with_suffix(index_path.suffix + ".audit.jsonl"))

    manifest = {
        "config": config.to_dict(),
        "corpus_digest": corpus_digest,
        "stitched_doc_id": stitched.doc_id,
        "started_at": started_at,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "counters": counters,
        "prompt_versions": PROMPT_VERSIONS,
        "index_digest": store.content_digest(),
    }
    manifest_path = index_path.with_suffix(index_path.suffix + ".manifest.json")
    _write_atomic(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return IngestResult(
        index_path=index_path,
        manifest_path=manifest_path,
        counters=counters,
        store_digest=manifest["index_digest"],
    )


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _embed_all(embedder, texts: list[str], ids: list[str]):
    try:
        return embedder.embed_batch(texts)
    except composer.EmbeddingError as exc:
        # Name the offending item when the local embedder can re-probe cheaply.
        if isinstance(embedder, composer.HashEmbedder):
            for item_id, text in zip(ids, texts):
                try:
                    embedder.embed(text)
                except composer.EmbeddingError:
                    raise PipelineError("embed", f"item {item_id}: {exc}", cause=exc) from exc
        raise PipelineError("embed", str(exc), cause=exc) from exc


def _query_embedder(store: vecstore.VectorStore, config: PipelineConfig | None):
    descriptor = store.metadata.get("embedder") or {}
    if descriptor.get("backend") == "hash":
        return composer.HashEmbedder(
            dimension=int(descriptor["dimension"]), seed=int(descriptor["seed"])
        )
    if config is None:
        raise PipelineError("configure", "store uses a remote embedder; config required")
    return build_embedder(config)


@dataclass
class QueryResult:
    hits: list[vecstore.SearchHit]
    x_texts: list[str]
    metadata: list[dict]


def run_query(
    index_path: str | Path,
    query_text: str,
    k: int,
    use_ann: bool = False,
    build_ann: bool = False,
    config: PipelineConfig | None = None,
) -> QueryResult:
    """Embed the raw query (no prefix) and return the top-k hits.

    Persisted indexes carry no ANN graph, so approximate search needs an
    explicit ``build_ann``; asking for ANN without it is an error.
    """
    if k < 1:
        raise PipelineError("query", f"k must be >= 1, got {k}")
    store = _stage("load_index", vecstore.VectorStore.load, index_path)
    if len(store) == 0:
        raise PipelineError("query", "index is empty")
    embedder = _query_embedder(store, config)
    vector = _stage("embed_query", embedder.embed, query_text)
    if use_ann:
        hnsw = config or PipelineConfig()
        if build_ann and not store.ann_built:
            _stage("build_ann", store.build_ann, hnsw.hnsw_m, hnsw.hnsw_ef_construction, hnsw.hnsw_seed)
        hits = _stage("search", store.search_ann, vector, k, hnsw.hnsw_ef_search)
    else:
        hits = _stage("search", store.search_exact, vector, k)
    return QueryResult(
        hits=hits,
        x_texts=[store.x_text(h.id) for h in hits],
        metadata=[store.item_metadata(h.id) for h in hits],
    )


@dataclass
class GenerationResult:
    answer: str
    prompt: str
    hits: list[vecstore.SearchHit]


def build_generation_prompt(question: str, evidence_texts: list[str]) -> str:
    template = load_prompt(ANSWER_PROMPT_VERSION)
    blocks = "\n\n".join(f"[{i}] {text}" for i, text in enumerate(evidence_texts, start=1))
    return template.replace("{question}", question).replace("{evidence}", blocks)


def run_generate(
    index_path: str | Path,
    question: str,
    k: int,
    gateway,
    config: PipelineConfig | None = None,
) -> GenerationResult:
    """Answer from the top-k retrieved evidence with one temperature-0 call."""
    retrieved = run_query(index_path, question, k, use_ann=False, config=config)
    prompt = build_generation_prompt(question, retrieved.x_texts)
    response = _stage("generate", gateway.complete, ChatRequest(prompt=prompt))
    logger.info("generated answer for %r from %d evidence chunks", question[:60], len(retrieved.hits))
    return GenerationResult(answer=response.text, prompt=prompt, hits=retrieved.hits)


@dataclass
class CompareResult:
    report_csv: Path
    report_txt: Path
    index_paths: dict[str, Path]
    failures: dict[str, str] = field(default_factory=dict)


def run_compare(config: PipelineConfig, strategies: tuple[str, ...] = ("CHOP", "NAIVE_500T", "COSINE_CHUNKING")) -> CompareResult:
    """Ingest one index per strategy, score all queries at every K, and write
    the comparison report (CSV plus aligned table).

    A failing strategy is recorded in the report notes; the others still run.
    """
    if not config.queries_path:
        raise PipelineError("configure", "queries_path is required")
    if not config.report_dir:
        raise PipelineError("configure", "report_dir is required")
    report_dir = Path(config.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    queries = _stage("load_queries", evalkit.load_queries, config.queries_path)

    max_k = max(config.k_list)
    scores: dict[tuple[str, int], dict[str, list[float]]] = {}
    failures: dict[str, str] = {}
    index_paths: dict[str, Path] = {}

    for strategy in strategies:
        strat_config = config.with_strategy(strategy)
        if strategy != "CHOP":
            # Baseline chunking is fixed by definition (NAIVE_500T = 500/100);
            # chunk-size overrides only steer the CHOP side of a comparison.
            strat_config = replace(strat_config, chunk_size=None, chunk_overlap=None)
        index_path = report_dir / f"index_{strategy}.bin"
        strat_config = _with_index(strat_config, index_path)
        try:
            ingest(strat_config)
            index_paths[strategy] = index_path
            _score_strategy(strat_config, index_path, queries, max_k, scores)
        except PipelineError as exc:
            failures[strategy] = str(exc)
            logger.error("strategy %s failed: %s", strategy, exc)

    if not scores:
        raise PipelineError("compare", f"all strategies failed: {failures}")
    report = evalkit.aggregate(scores)
    if failures:
        report.notes = report.notes + tuple(
            f"strategy {name} failed: {message}" for name, message in sorted(failures.items())
        )
    report_csv = report_dir / "report.csv"
    report_txt = report_dir / "report.txt"
    _write_atomic(report_csv, report.to_csv())
    _write_atomic(report_txt, report.to_table())
    return CompareResult(
        report_csv=report_csv, report_txt=report_txt, index_paths=index_paths, failures=failures
    )


def _with_index(config: PipelineConfig, index_path: Path) -> PipelineConfig:
    return replace(config, index_path=str(index_path))


def _score_strategy(
    config: PipelineConfig,
    index_path: Path,
    queries: list[evalkit.QueryRecord],
    max_k: int,
    scores: dict[tuple[str, int], dict[str, list[float]]],
) -> None:
    store = vecstore.VectorStore.load(index_path)
    embedder = _query_embedder(store, config)
    gateway = None
    if config.generate_answers:
        gateway = build_gateway(config)

    runs: dict[str, list[evalkit.RankedHit]] = {}
    raw_hits: dict[str, list[vecstore.SearchHit]] = {}
    for query in queries:
        vector = embedder.embed(query.text)
        hits = store.search_exact(vector, max_k)
        raw_hits[query.query_id] = hits
        runs[query.query_id] = [
            evalkit.RankedHit(
                id=h.id,
                score=h.score,
                doc_id=store.item_metadata(h.id)["doc_id"],
                char_span=tuple(store.item_metadata(h.id)["char_span"]),
            )
            for h in hits
        ]

    run = evalkit.RetrievalRun(strategy=config.strategy, k=max_k, hits=runs)
    for k in config.k_list:
        cell = scores.setdefault((config.strategy, k), {m: [] for m in evalkit.METRIC_COLUMNS})
        for query in queries:
            cell["hit_rate"].append(evalkit.hit_at_k(run, query, k, config.min_overlap))
            cell["mrr"].append(evalkit.mrr_at_k(run, query, k, config.min_overlap))
            cell["ndcg"].append(evalkit.ndcg_at_k(run, query, k, config.min_overlap))
            if gateway is not None and query.reference_answer is not None:
                # Answers are regenerated per K so each column reflects its
                # own evidence budget.
                evidence = [store.x_text(h.id) for h in raw_hits[query.query_id][:k]]
                prompt = build_generation_prompt(query.text, evidence)
                answer = gateway.complete(ChatRequest(prompt=prompt)).text
                reference = query.reference_answer or ""
                cell["f1"].append(evalkit.token_f1(answer, reference))
                cell["rouge_l"].append(evalkit.rouge_l(answer, reference))
                cell["sem_score"].append(evalkit.sem_score(answer, reference, embedder))
