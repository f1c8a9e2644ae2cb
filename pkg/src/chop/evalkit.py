"""Retrieval and generation scoring.

Relevance is span overlap: a retrieved chunk is relevant when it covers at
least half of some gold-evidence span (the threshold is configurable), which
keeps the judgment uniform across chunking strategies whose chunk identities
never line up. Generation quality uses token F1, LCS-based ROUGE-L, and an
embedder-backed semantic score.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_MIN_OVERLAP = 0.5

METRIC_COLUMNS = ("hit_rate", "mrr", "ndcg", "f1", "rouge_l", "sem_score")

_PUNCT_RE = re.compile(r"[^\w\s]")


class EvalError(ValueError):
    pass


class Span(NamedTuple):
    doc_id: str
    start: int
    end: int


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str
    gold_spans: tuple[Span, ...]
    reference_answer: str | None = None


@dataclass(frozen=True)
class RankedHit:
    id: str
    score: float
    doc_id: str
    char_span: tuple[int, int]


@dataclass
class RetrievalRun:
    strategy: str
    k: int
    hits: dict[str, list[RankedHit]] = field(default_factory=dict)

    def hits_for(self, query_id: str) -> list[RankedHit]:
        if query_id not in self.hits:
            raise EvalError(f"unknown query_id: {query_id!r}")
        return self.hits[query_id]


def load_queries(path: str | Path) -> list[QueryRecord]:
    """Load queries from JSONL {query_id, text, gold: [...], reference_answer?}."""
    path = Path(path)
    if not path.exists():
        raise EvalError(f"query file not found: {path}")
    records: list[QueryRecord] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvalError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            gold = []
            for g in raw.get("gold", []):
                span = Span(g["doc_id"], int(g["start"]), int(g["end"]))
                if span.start >= span.end:
                    raise EvalError(f"{path}:{lineno}: empty gold span {span}")
                gold.append(span)
            if not gold:
                raise EvalError(f"{path}:{lineno}: query needs at least one gold span")
            records.append(
                QueryRecord(
                    query_id=str(raw["query_id"]),
                    text=raw["text"],
                    gold_spans=tuple(gold),
                    reference_answer=raw.get("reference_answer"),
                )
            )
    return records


# --- relevance and ranking metrics ---------------------------------------


def overlap_ratio(hit_doc_id: str, hit_span: tuple[int, int], gold: Span) -> float:
    """Fraction of the gold span covered by the hit span (0 across documents)."""
    if hit_doc_id != gold.doc_id:
        return 0.0
    covered = min(hit_span[1], gold.end) - max(hit_span[0], gold.start)
    if covered <= 0:
        return 0.0
    return covered / (gold.end - gold.start)


def is_relevant(
    hit_doc_id: str,
    hit_span: tuple[int, int],
    gold_spans: Sequence[Span],
    min_overlap: float = DEFAULT_MIN_OVERLAP,
) -> bool:
    return any(overlap_ratio(hit_doc_id, hit_span, g) >= min_overlap for g in gold_spans)


def hit_at_k(
    run: RetrievalRun, query: QueryRecord, k: int, min_overlap: float = DEFAULT_MIN_OVERLAP
) -> int:
    hits = run.hits_for(query.query_id)[:k]
    return int(any(is_relevant(h.doc_id, h.char_span, query.gold_spans, min_overlap) for h in hits))


def mrr_at_k(
    run: RetrievalRun, query: QueryRecord, k: int, min_overlap: float = DEFAULT_MIN_OVERLAP
) -> float:
    for rank, hit in enumerate(run.hits_for(query.query_id)[:k], start=1):
        if is_relevant(hit.doc_id, hit.char_span, query.gold_spans, min_overlap):
            return 1.0 / rank
    return 0.0


def ndcg_at_k(
    run: RetrievalRun, query: QueryRecord, k: int, min_overlap: float = DEFAULT_MIN_OVERLAP
) -> float:
    """Binary-gain NDCG with log2(rank+1) discounting.

    Each gold span is credited to at most one hit (the one covering it best,
    earliest rank first), so the score never exceeds the ideal ordering's.
    """
    if not query.gold_spans:
        raise EvalError(f"query {query.query_id!r} has no gold spans")
    hits = run.hits_for(query.query_id)[:k]
    credited: set[int] = set()
    dcg = 0.0
    for rank, hit in enumerate(hits, start=1):
        best: tuple[float, int] | None = None
        for gi, gold in enumerate(query.gold_spans):
            if gi in credited:
                continue
            ratio = overlap_ratio(hit.doc_id, hit.char_span, gold)
            if ratio >= min_overlap and (best is None or ratio > best[0]):
                best = (ratio, gi)
        if best is not None:
            credited.add(best[1])
            dcg += 1.0 / math.log2(rank + 1)
    ideal = min(k, len(query.gold_spans))
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, ideal + 1))
    return dcg / idcg


# --- generation metrics ---------------------------------------------------


def normalize_tokens(text: str) -> list[str]:
    """Shared normalization: lowercase, strip punctuation, split on whitespace."""
    return _PUNCT_RE.sub("", text.lower()).split()


def token_f1(prediction: str, reference: str) -> float:
    """Harmonic mean of precision and recall over the token-multiset overlap.

    Computed as 2*overlap/(|pred|+|ref|), the algebraically exact form of
    2PR/(P+R), so round fractions come out bit-exact.
    """
    pred = Counter(normalize_tokens(prediction))
    ref = Counter(normalize_tokens(reference))
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = sum((pred & ref).values())
    return 2 * overlap / (sum(pred.values()) + sum(ref.values()))


def rouge_l(prediction: str, reference: str) -> float:
    """F-measure (beta=1) over the token-level longest common subsequence.

    Same exact 2*lcs/(|pred|+|ref|) form as token_f1.
    """
    pred = normalize_tokens(prediction)
    ref = normalize_tokens(reference)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    lcs = _lcs_length(pred, ref)
    return 2 * lcs / (len(pred) + len(ref))


def _lcs_length(a: list[str], b: list[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def sem_score(prediction: str, reference: str, embedder) -> float:
    """Greedy bidirectional token matching under the embedder.

    Approximation of a pretrained semantic scorer: each token on one side is
    matched to its highest-cosine token on the other, the two directional
    means form an F-measure, and the result is clamped to [0, 1].
    """
    pred = normalize_tokens(prediction)
    ref = normalize_tokens(reference)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    vocab = sorted(set(pred) | set(ref))
    vectors = {token: np.asarray(embedder.embed(token).values, dtype=np.float64) for token in vocab}
    pred_matrix = np.stack([vectors[t] for t in pred])
    ref_matrix = np.stack([vectors[t] for t in ref])
    similarity = pred_matrix @ ref_matrix.T  # embedder output is unit-norm
    precision = float(np.clip(similarity.max(axis=1).mean(), 0.0, 1.0))
    recall = float(np.clip(similarity.max(axis=0).mean(), 0.0, 1.0))
    if precision + recall == 0.0:
        return 0.0
    return float(np.clip(2 * precision * recall / (precision + recall), 0.0, 1.0))


# --- aggregation and report rendering -------------------------------------


@dataclass(frozen=True)
class ReportRow:
    strategy: str
    k: int
    hit_rate: float
    mrr: float
    ndcg: float
    f1: float | None
    rouge_l: float | None
    sem_score: float | None
    query_count: int

    def metric(self, name: str):
        return getattr(self, name)


@dataclass
class MetricReport:
    rows: list[ReportRow]
    notes: tuple[str, ...] = (
        "Queries with no relevant hit in the top-K contribute 0 to the MRR mean.",
    )

    def to_csv(self) -> str:
        lines = ["strategy,K," + ",".join(METRIC_COLUMNS)]
        for row in self.rows:
            cells = [row.strategy, str(row.k)]
            for name in METRIC_COLUMNS:
                value = row.metric(name)
                cells.append("" if value is None else f"{value:.6f}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        headers = ["strategy", "K", *METRIC_COLUMNS]
        body: list[list[str]] = []
        for row in self.rows:
            cells = [row.strategy, str(row.k)]
            for name in METRIC_COLUMNS:
                value = row.metric(name)
                cells.append("-" if value is None else f"{value:.4f}")
            body.append(cells)
        widths = [max(len(headers[i]), *(len(r[i]) for r in body)) if body else len(headers[i])
                  for i in range(len(headers))]
        def fmt(cells: list[str]) -> str:
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        lines = [fmt(headers), fmt(["-" * w for w in widths])]
        lines.extend(fmt(r) for r in body)
        lines.append("")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"


def mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def aggregate(
    scores: dict[tuple[str, int], dict[str, list[float]]],
) -> MetricReport:
    """Arithmetic means per metric for every (strategy, K) cell.

    Generation metrics may be absent for a cell; they render as blanks.
    """
    if not scores:
        raise EvalError("no query scores to aggregate")
    rows: list[ReportRow] = []
    for (strategy, k) in sorted(scores.keys()):
        per_metric = scores[(strategy, k)]
        counts = {len(v) for v in per_metric.values() if v}
        if not counts:
            raise EvalError(f"empty query set for {strategy!r} @ K={k}")
        query_count = max(counts)
        def mean_of(name: str):
            values = per_metric.get(name)
            return mean(values) if values else None
        hit = mean_of("hit_rate")
        mrr = mean_of("mrr")
        ndcg = mean_of("ndcg")
        if hit is None or mrr is None or ndcg is None:
            raise EvalError(f"missing retrieval metrics for {strategy!r} @ K={k}")
        rows.append(
            ReportRow(
                strategy=strategy,
                k=k,
                hit_rate=hit,
                mrr=mrr,
                ndcg=ndcg,
                f1=mean_of("f1"),
                rouge_l=mean_of("rouge_l"),
                sem_score=mean_of("sem_score"),
                query_count=query_count,
            )
        )
    return MetricReport(rows=rows)
