"""Byte framing for packed document streams.

A cluster is shipped as one opaque byte column:

    [u32 doc_count] then per document
    [u64 doc_id][u32 text_len][d * 4 bytes f32 embedding][text bytes]

zero-padded up to a whole number of chunks. All integers little-endian.
The embedding dimension is not framed; both sides learn d at setup.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ClusterOverflow, FramingError, InvalidConfig

_COUNT = struct.Struct("<I")
_DOC_HEAD = struct.Struct("<QI")


@dataclass(eq=False)
class EmbeddingRecord:
    """One corpus document: stable id, float32 embedding, raw text."""

    doc_id: int
    embedding: np.ndarray
    text: str


def frame_docs(docs: list[EmbeddingRecord]) -> bytes:
    """Frame documents without padding; the reusable inner encoding."""
    parts = [_COUNT.pack(len(docs))]
    for rec in docs:
        if not 0 <= rec.doc_id < 1 << 64:
            raise InvalidConfig(f"doc id {rec.doc_id} does not fit u64")
        emb = np.ascontiguousarray(rec.embedding, dtype="<f4")
        text = rec.text.encode("utf-8")
        parts.append(_DOC_HEAD.pack(rec.doc_id, len(text)))
        parts.append(emb.tobytes())
        parts.append(text)
    return b"".join(parts)


def pack_cluster_bytes(
    docs: list[EmbeddingRecord],
    chunk_size: int,
    target_chunks: int | None = None,
) -> bytes:
    """Frame a cluster and zero-pad it to target_chunks whole chunks.

    With target_chunks omitted the minimum chunk count is used. Raises
    ClusterOverflow when the framed documents exceed the byte budget.
    """
    if chunk_size < 1:
        raise InvalidConfig(f"chunk_size must be positive, got {chunk_size}")
    framed = frame_docs(docs)
    needed = max(1, -(-len(framed) // chunk_size))
    if target_chunks is None:
        target_chunks = needed
    capacity = target_chunks * chunk_size
    if len(framed) > capacity:
        raise ClusterOverflow(
            f"framed cluster is {len(framed)} bytes but budget is "
            f"{target_chunks} x {chunk_size} = {capacity}"
        )
    return framed + bytes(capacity - len(framed))


def unpack_cluster(stream: bytes, d: int) -> list[EmbeddingRecord]:
    """Inverse of pack_cluster_bytes; ignores trailing padding.

    Raises FramingError when a declared length runs past the stream.
    """
    if len(stream) < _COUNT.size:
        raise FramingError("stream shorter than its count prefix")
    (count,) = _COUNT.unpack_from(stream, 0)
    offset = _COUNT.size
    emb_bytes = 4 * d
    docs = []
    for _ in range(count):
        if offset + _DOC_HEAD.size + emb_bytes > len(stream):
            raise FramingError(
                f"document header at offset {offset} overruns {len(stream)}-byte stream"
            )
        doc_id, text_len = _DOC_HEAD.unpack_from(stream, offset)
        offset += _DOC_HEAD.size
        emb = np.frombuffer(stream, dtype="<f4", count=d, offset=offset).copy()
        offset += emb_bytes
        if offset + text_len > len(stream):
            raise FramingError(
                f"text of {text_len} bytes at offset {offset} overruns stream"
            )
        try:
            text = stream[offset:offset + text_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FramingError(f"text at offset {offset} is not valid UTF-8") from exc
        offset += text_len
        docs.append(EmbeddingRecord(doc_id=doc_id, embedding=emb, text=text))
    return docs
