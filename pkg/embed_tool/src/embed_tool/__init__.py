"""Offline embedding tool: raw text JSONL in, embedded corpus JSONL out.

The output format is the retrieval stack's ingestion contract -- a manifest
line followed by id/text/embedding records with unit-norm vectors -- but
this package is standalone: the retrieval stack never imports it, and it
never imports the retrieval stack.
"""

from .errors import EmbedToolError, ModelLoadError, ParseError
from .models import DEFAULT_MODEL, HashingFeaturizer, load_model
from .pipeline import (
    RawDoc,
    ValidationReport,
    embed_corpus,
    load_raw_docs,
    validate_schema,
)

__all__ = [
    "DEFAULT_MODEL",
    "EmbedToolError",
    "HashingFeaturizer",
    "ModelLoadError",
    "ParseError",
    "RawDoc",
    "ValidationReport",
    "embed_corpus",
    "load_model",
    "load_raw_docs",
    "validate_schema",
]
