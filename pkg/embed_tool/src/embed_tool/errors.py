"""Typed failures for the embedding pipeline."""


class EmbedToolError(Exception):
    """Base class for every failure this tool raises on purpose."""


class ParseError(EmbedToolError):
    """An input line is not a valid raw document; message carries the line number."""


class ModelLoadError(EmbedToolError):
    """The requested embedding model cannot be loaded in this environment."""
