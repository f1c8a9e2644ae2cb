"""Pipeline configuration and the flat key-value config file format."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

STRATEGIES = ("CHOP", "NAIVE_500T", "COSINE_CHUNKING")

NAIVE_CHUNK_SIZE = 500
NAIVE_CHUNK_OVERLAP = 100
CHOP_CHUNK_SIZE = 500
CHOP_CHUNK_OVERLAP = 0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    strategy: str = "CHOP"
    # None means the strategy default: (500, 0) for CHOP, (500, 100) for NAIVE_500T.
    chunk_size: int | None = None
    chunk_overlap: int | None = None
    cosine_threshold: float = 0.35
    embedder_backend: str = "hash"
    embedder_dimension: int = 512
    embedder_seed: int = 13
    embedder_endpoint: str | None = None
    embedder_model: str | None = None
    gateway_backend: str = "scripted"
    gateway_endpoint: str | None = None
    gateway_model: str | None = None
    transcript_path: str | None = None
    record_transcript: str | None = None
    api_key_env: str = "CHOP_API_KEY"
    anchor_cap: int = 600
    k_list: tuple[int, ...] = (1, 3, 5, 10)
    generation_k: int = 5
    min_overlap: float = 0.5
    stitch_joiner: str = "\n"
    hnsw_m: int = 16
    hnsw_ef_construction: int = 200
    hnsw_ef_search: int = 64
    hnsw_seed: int = 1337
    corpus_path: str | None = None
    queries_path: str | None = None
    index_path: str | None = None
    report_dir: str | None = None
    generate_answers: bool = False

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if list(self.k_list) != sorted(self.k_list) or len(set(self.k_list)) != len(self.k_list):
            raise ConfigError(f"k_list must be strictly ascending, got {self.k_list}")
        if any(k < 1 for k in self.k_list):
            raise ConfigError("k_list entries must be >= 1")

    def effective_chunk_size(self) -> int:
        if self.chunk_size is not None:
            return self.chunk_size
        return NAIVE_CHUNK_SIZE if self.strategy == "NAIVE_500T" else CHOP_CHUNK_SIZE

    def effective_chunk_overlap(self) -> int:
        if self.chunk_overlap is not None:
            return self.chunk_overlap
        return NAIVE_CHUNK_OVERLAP if self.strategy == "NAIVE_500T" else CHOP_CHUNK_OVERLAP

    def with_strategy(self, strategy: str) -> "PipelineConfig":
        return replace(self, strategy=strategy)

    def embedder_descriptor(self) -> dict:
        if self.embedder_backend == "hash":
            return {
                "backend": "hash",
                "dimension": self.embedder_dimension,
                "seed": self.embedder_seed,
            }
        return {
            "backend": self.embedder_backend,
            "dimension": self.embedder_dimension,
            "endpoint": self.embedder_endpoint,
            "model": self.embedder_model,
        }

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


_INT_FIELDS = {
    "chunk_size", "chunk_overlap", "embedder_dimension", "embedder_seed", "anchor_cap",
    "generation_k", "hnsw_m", "hnsw_ef_construction", "hnsw_ef_search", "hnsw_seed",
}
_FLOAT_FIELDS = {"cosine_threshold", "min_overlap"}
_BOOL_FIELDS = {"generate_answers"}
_LIST_FIELDS = {"k_list"}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse `key = value` lines into a field dict; '#' starts a comment."""
    known = {f.name for f in fields(PipelineConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, value, source, lineno)
    return values


def _coerce(key: str, value: str, source: str, lineno: int):
    try:
        if key in _LIST_FIELDS:
            return tuple(int(v.strip()) for v in value.split(",") if v.strip())
        if key in _INT_FIELDS:
            return int(value)
        if key in _FLOAT_FIELDS:
            return float(value)
        if key in _BOOL_FIELDS:
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {value}")
    except ValueError as exc:
        raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    if value.lower() == "none" or value == "":
        return None
    return value


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = parse_config_text(path.read_text(encoding="utf-8"), source=str(path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
