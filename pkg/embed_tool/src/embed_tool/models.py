"""Embedding backends.

Two kinds of model answer to `load_model`:

* ``hashing:<dim>`` -- a dependency-free feature-hashing featurizer.  It is
  deterministic, works offline, and exists so the pipeline and its tests can
  run anywhere; the vectors are bag-of-words quality, not semantic.
* any other name -- a sentence-transformers model, loaded lazily so the
  heavyweight backend is only imported when actually requested.  The
  documented default is bge-base-en-v1.5.

Every backend exposes ``dim`` (known before any text is seen, so an empty
corpus still gets a correct manifest) and ``encode(texts, batch_size)``
returning one float vector per text.  Normalization happens in the pipeline,
in one place, for all backends.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from .errors import ModelLoadError

DEFAULT_MODEL = "bge-base-en-v1.5"

# Short names from the model card, mapped to the hub ids the backend needs.
_HUB_ALIASES = {
    "bge-base-en-v1.5": "BAAI/bge-base-en-v1.5",
    "bge-small-en-v1.5": "BAAI/bge-small-en-v1.5",
    "bge-large-en-v1.5": "BAAI/bge-large-en-v1.5",
}

_TOKEN = re.compile(r"[a-z0-9]+")


class HashingFeaturizer:
    """Signed feature hashing over lowercase alphanumeric tokens.

    Identical texts always produce identical vectors.  A text with no
    tokens at all still gets a deterministic nonzero vector (hashed from
    its raw bytes) so every document can be unit-normalized.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ModelLoadError(f"hashing featurizer needs a positive dim, got {dim}")
        self.dim = dim

    def _bucket(self, data: bytes, salt: bytes) -> tuple[int, float]:
        digest = hashlib.blake2b(data, digest_size=9, person=salt).digest()
        sign = 1.0 if digest[8] & 1 else -1.0
        return int.from_bytes(digest[:8], "little") % self.dim, sign

    def encode(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            tokens = _TOKEN.findall(text.lower())
            if not tokens:
                bucket, sign = self._bucket(text.encode("utf-8"), b"raw-text")
                out[row, bucket] = sign
                continue
            for token in tokens:
                bucket, sign = self._bucket(token.encode("utf-8"), b"token")
                out[row, bucket] += sign
            if not out[row].any():  # sign cancellation, possible but unlikely
                bucket, sign = self._bucket(text.encode("utf-8"), b"raw-text")
                out[row, bucket] = sign
        return out


class SentenceModel:
    """Thin adapter over a sentence-transformers model."""

    def __init__(self, name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelLoadError(
                f"model {name!r} needs the sentence-transformers backend; "
                f"install the [model] extra"
            ) from exc
        hub_id = _HUB_ALIASES.get(name, name)
        try:
            self._model = SentenceTransformer(hub_id)
        except Exception as exc:  # hub/io errors vary by backend version
            raise ModelLoadError(f"cannot load model {name!r} ({hub_id}): {exc}") from exc
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        vectors = self._model.encode(
            texts, batch_size=batch_size, convert_to_numpy=True
        )
        return np.asarray(vectors, dtype=np.float64)


def load_model(name: str):
    """Resolve a model name to a backend instance."""
    if name.startswith("hashing:"):
        try:
            dim = int(name.split(":", 1)[1])
        except ValueError as exc:
            raise ModelLoadError(f"bad hashing model name {name!r}") from exc
        return HashingFeaturizer(dim)
    return SentenceModel(name)
