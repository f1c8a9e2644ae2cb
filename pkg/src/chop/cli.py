"""Command-line entry points: ingest, query, generate, compare, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .composer import EmbeddingError
from .config import ConfigError, PipelineConfig, load_config
from .corpus import CorpusError
from .evalkit import EvalError
from .llm_gateway import GatewayError
from .pipeline import (
    PipelineError,
    build_gateway,
    ingest,
    run_compare,
    run_generate,
    run_query,
)
from .vecstore import StoreError, VectorStore, hits_to_jsonl

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class UsageError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chop",
        description="Context-preserving chunking, retrieval, and evaluation for stitched corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--transcript", help="scripted-gateway transcript path")

    p_ingest = sub.add_parser("ingest", parents=[common], help="build an index from a corpus")
    p_ingest.add_argument("--strategy", choices=("CHOP", "NAIVE_500T", "COSINE_CHUNKING"))
    p_ingest.add_argument("--corpus", help="corpus JSONL path")
    p_ingest.add_argument("--index", help="output index path")

    p_query = sub.add_parser("query", parents=[common], help="search an index")
    p_query.add_argument("--index", required=True)
    p_query.add_argument("--text", required=True, help="query text")
    p_query.add_argument("--k", type=int, default=5)
    mode = p_query.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", default=True)
    mode.add_argument("--ann", action="store_true", default=False)
    p_query.add_argument("--build-ann", action="store_true", default=False,
                         help="build the HNSW graph before an --ann search")
    p_query.add_argument("--export", help="write hits as JSONL {id, score}")

    p_generate = sub.add_parser("generate", parents=[common], help="answer from retrieved evidence")
    p_generate.add_argument("--index", required=True)
    p_generate.add_argument("--question", required=True)
    p_generate.add_argument("--k", type=int, default=None)

    p_compare = sub.add_parser("compare", parents=[common], help="run the three-strategy comparison")
    p_compare.add_argument("--corpus")
    p_compare.add_argument("--queries")
    p_compare.add_argument("--report-dir")
    p_compare.add_argument("--generate", action="store_true", help="also score generated answers")

    p_inspect = sub.add_parser("inspect", parents=[common], help="dump index metadata")
    p_inspect.add_argument("--index", required=True)
    return parser


def _load_config(args, overrides: dict) -> PipelineConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "transcript", None):
        overrides["transcript_path"] = args.transcript
        overrides.setdefault("gateway_backend", "scripted")
    if args.config:
        return load_config(args.config, overrides)
    return PipelineConfig(**overrides)


def cmd_ingest(args) -> int:
    config = _load_config(
        args,
        {"strategy": args.strategy, "corpus_path": args.corpus, "index_path": args.index},
    )
    result = ingest(config)
    print(f"indexed {result.counters['chunks']} chunks -> {result.index_path}")
    print(f"manifest: {result.manifest_path}")
    for name in ("documents", "chunks", "extractions", "decisions", "embeddings"):
        print(f"  {name}: {result.counters[name]}")
    return EXIT_OK


def cmd_query(args) -> int:
    if args.k < 1:
        raise UsageError(f"--k must be >= 1, got {args.k}")
    config = _load_config(args, {}) if args.config else None
    result = run_query(
        args.index, args.text, args.k,
        use_ann=args.ann, build_ann=args.build_ann, config=config,
    )
    for hit, x_text in zip(result.hits, result.x_texts):
        snippet = " ".join(x_text.split())[:120]
        print(f"{hit.rank:2d}. {hit.id}  score={hit.score:.6f}  {snippet}")
    if args.export:
        Path(args.export).write_text(hits_to_jsonl(result.hits), encoding="utf-8")
        print(f"exported {len(result.hits)} hits -> {args.export}")
    return EXIT_OK


def cmd_generate(args) -> int:
    config = _load_config(args, {})
    k = args.k if args.k is not None else config.generation_k
    if k < 1:
        raise UsageError(f"--k must be >= 1, got {k}")
    gateway = build_gateway(config)
    result = run_generate(args.index, args.question, k, gateway, config=config)
    print(result.answer)
    return EXIT_OK


def cmd_compare(args) -> int:
    config = _load_config(
        args,
        {
            "corpus_path": args.corpus,
            "queries_path": args.queries,
            "report_dir": args.report_dir,
            "generate_answers": True if args.generate else None,
        },
    )
    result = run_compare(config)
    print(result.report_txt.read_text(encoding="utf-8"))
    print(f"reports: {result.report_csv} {result.report_txt}")
    if result.failures:
        for strategy, message in sorted(result.failures.items()):
            print(f"FAILED {strategy}: {message}", file=sys.stderr)
    return EXIT_OK


def cmd_inspect(args) -> int:
    store = VectorStore.load(args.index)
    info = {
        "path": str(args.index),
        "count": len(store),
        "dimension": store.dimension,
        "metadata": store.metadata,
        "content_digest": store.content_digest(),
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "query": cmd_query,
    "generate": cmd_generate,
    "compare": cmd_compare,
    "inspect": cmd_inspect,
}


def _classify(exc: Exception) -> int:
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, (GatewayError, EmbeddingError)):
        return EXIT_BACKEND
    if isinstance(exc, PipelineError):
        if exc.cause is not None and not isinstance(exc.cause, PipelineError):
            return _classify(exc.cause)
        return EXIT_USAGE if exc.stage == "configure" else EXIT_DATA
    if isinstance(exc, (CorpusError, EvalError, StoreError, OSError, ValueError)):
        return EXIT_DATA
    return EXIT_DATA


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single exit-code boundary
        print(f"error: {exc}", file=sys.stderr)
        return _classify(exc)


if __name__ == "__main__":
    sys.exit(main())
