"""Versioned prompt templates shipped as package data."""

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    """Load a prompt template by its versioned name (without extension)."""
    return (
        resources.files(__package__)
        .joinpath(f"{name}.txt")
        .read_text(encoding="utf-8")
    )
