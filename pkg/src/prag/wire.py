"""Wire protocol: length-prefixed frames and message payload codecs.

Every message is [u32 length][u8 type][payload] with length covering the
type byte plus payload. The setup response carries everything a client
needs to encrypt queries and decode answers (parameters, centroids, id
maps, decryption hints); after that, queries and answers are flat arrays
of ciphertext words.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError, TransportError
from .index import (
    _HEADER,
    _PARAM_BLOCK,
    _PARAM_ORDER,
    _PROFILE_CODES,
    _PROFILE_NAMES,
    _Reader,
    BuiltIndex,
)
from .lwe import LweParams, PirHint

# Protocol ceiling.  Setup frames carry the PIR hints, which scale with
# database rows (hundreds of MB at a few thousand documents), so the limit
# must admit them; the u32 length field bounds frames at 4 GB regardless.
MAX_FRAME = 1 << 31
# Inbound cap for the server side: clients only ever send small frames
# (hello + encrypted query vectors), so anything large is garbage and gets
# rejected before allocation.
SERVER_MAX_FRAME = 1 << 24
_LEN = struct.Struct("<I")
_ERR_HEAD = struct.Struct("<H")
_CLUSTER_HEAD = struct.Struct("<I")

MSG_SETUP_REQ = 0x01
MSG_SETUP_RESP = 0x02
MSG_PIR_QUERY = 0x03
MSG_PIR_ANSWER = 0x04
MSG_SCORE_QUERY = 0x05
MSG_SCORE_ANSWER = 0x06
MSG_ERROR = 0x7F

ERR_UNKNOWN_TYPE = 1
ERR_MALFORMED = 2
ERR_DIMENSION = 3
ERR_UNKNOWN_TARGET = 4

TARGET_CLUSTER = 0
TARGET_DOC = 1
TARGET_NODE = 2
TARGET_NAMES = {TARGET_CLUSTER: "cluster", TARGET_DOC: "doc", TARGET_NODE: "node"}


def pack_frame(msg_type: int, payload: bytes) -> bytes:
    """One full frame, ready to write."""
    length = 1 + len(payload)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds the {MAX_FRAME} cap")
    return _LEN.pack(length) + bytes([msg_type]) + payload


def split_frame(frame: bytes) -> tuple[int, bytes]:
    """Parse one complete in-memory frame."""
    if len(frame) < 5:
        raise ProtocolError(f"frame of {len(frame)} bytes is shorter than any message")
    (length,) = _LEN.unpack_from(frame, 0)
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(f"frame length {length} out of range")
    if len(frame) != 4 + length:
        raise ProtocolError(f"frame length {length} does not match {len(frame) - 4} bytes")
    return frame[4], frame[5:]


def _read_exact(rfile, n: int, at_boundary: bool) -> bytes | None:
    chunks = []
    got = 0
    while got < n:
        chunk = rfile.read(n - got)
        if not chunk:
            if at_boundary and got == 0:
                return None
            raise TransportError(f"connection closed after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(rfile, max_frame: int = MAX_FRAME) -> tuple[int, bytes] | None:
    """Read one frame from a blocking stream; None on clean end-of-stream."""
    head = _read_exact(rfile, 4, at_boundary=True)
    if head is None:
        return None
    (length,) = _LEN.unpack(head)
    if length < 1 or length > max_frame:
        raise ProtocolError(f"frame length {length} out of range")
    body = _read_exact(rfile, length, at_boundary=False)
    return body[0], body[1:]


def write_frame(wfile, msg_type: int, payload: bytes) -> int:
    """Write one frame; returns the byte count put on the wire."""
    frame = pack_frame(msg_type, payload)
    wfile.write(frame)
    return len(frame)


# ---------------------------------------------------------------------------
# payload codecs


def pack_pir_query(target: int, entries: np.ndarray) -> bytes:
    width = entries.dtype.itemsize
    return bytes([target]) + np.ascontiguousarray(entries, dtype=f"<u{width}").tobytes()


def unpack_pir_query(payload: bytes) -> tuple[int, bytes]:
    if len(payload) < 1:
        raise ProtocolError("empty retrieval query payload")
    return payload[0], payload[1:]


def pack_score_query(cluster_id: int, entries: np.ndarray) -> bytes:
    return _CLUSTER_HEAD.pack(cluster_id) + np.ascontiguousarray(
        entries, dtype="<u8"
    ).tobytes()


def unpack_score_query(payload: bytes) -> tuple[int, bytes]:
    if len(payload) < _CLUSTER_HEAD.size:
        raise ProtocolError("scoring query payload lacks a cluster id")
    (cluster_id,) = _CLUSTER_HEAD.unpack_from(payload, 0)
    return cluster_id, payload[_CLUSTER_HEAD.size:]


def pack_error(code: int, message: str) -> bytes:
    return _ERR_HEAD.pack(code) + message.encode("utf-8")


def unpack_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < _ERR_HEAD.size:
        raise ProtocolError("error payload lacks a code")
    (code,) = _ERR_HEAD.unpack_from(payload, 0)
    return code, payload[_ERR_HEAD.size:].decode("utf-8", errors="replace")


# ---------------------------------------------------------------------------
# setup blob


@dataclass(eq=False)
class ClientSetup:
    """Everything a client holds after the setup exchange."""

    k: int
    d: int
    chunk_size: int
    n_docs: int
    degree: int
    entry_col: int
    maxabs: float
    capacity: int
    params: dict[str, LweParams]
    centroids: np.ndarray  # (k, d) float32, unit rows
    doc_ids: np.ndarray  # (n_docs,) uint64, column order
    row_ids: np.ndarray  # (k, capacity) int64, -1 marks padding
    hints: dict[str, PirHint]  # keys: cluster, doc, node
    score_hints: list[PirHint]


def pack_setup_blob(index: BuiltIndex) -> bytes:
    # container structs shared with the on-disk bundle format
    parts = [
        struct.pack("<H", 1),
        _HEADER.pack(
            index.k,
            index.d,
            index.chunk_size,
            index.n_docs,
            index.node.degree,
            index.node.entry_col,
            index.node.maxabs,
            index.score.capacity,
        ),
    ]
    for name in _PARAM_ORDER:
        p = index.params[name]
        parts.append(
            _PARAM_BLOCK.pack(
                p.n_cols,
                p.lwe_dim,
                p.cipher_mod_bits,
                p.plain_mod,
                p.err_bound,
                _PROFILE_CODES[p.profile],
                p.a_seed,
            )
        )
    parts.append(np.ascontiguousarray(index.model.centroids, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(index.doc.doc_ids, dtype="<u8").tobytes())
    parts.append(np.ascontiguousarray(index.score.row_ids, dtype="<i8").tobytes())
    for name in ("cluster", "doc", "node"):
        hint = index.hints[name]
        width = index.params[name].cipher_mod_bits // 8
        parts.append(struct.pack("<Q", hint.values.shape[0]))
        parts.append(np.ascontiguousarray(hint.values, dtype=f"<u{width}").tobytes())
    for hint in index.score_hints:
        parts.append(np.ascontiguousarray(hint.values, dtype="<u8").tobytes())
    return b"".join(parts)


def unpack_setup_blob(data: bytes) -> ClientSetup:
    try:
        r = _Reader(data)
        (version,) = struct.unpack("<H", r.take(2))
        if version != 1:
            raise ProtocolError(f"setup blob version {version} unsupported")
        k, d, chunk_size, n_docs, degree, entry_col, maxabs, capacity = r.unpack(_HEADER)
        params: dict[str, LweParams] = {}
        for name in _PARAM_ORDER:
            n_cols, lwe_dim, bits, plain_mod, err_bound, code, seed = r.unpack(
                _PARAM_BLOCK
            )
            if code not in _PROFILE_NAMES:
                raise ProtocolError(f"unknown profile code {code}")
            params[name] = LweParams(
                n_cols=n_cols,
                lwe_dim=lwe_dim,
                cipher_mod_bits=bits,
                plain_mod=plain_mod,
                err_bound=err_bound,
                profile=_PROFILE_NAMES[code],
                a_seed=seed,
            )
        centroids = r.array("<f4", (k, d))
        doc_ids = r.array("<u8", (n_docs,))
        row_ids = r.array("<i8", (k, capacity))
        hints: dict[str, PirHint] = {}
        for name in ("cluster", "doc", "node"):
            (m_rows,) = struct.unpack("<Q", r.take(8))
            p = params[name]
            width = p.cipher_mod_bits // 8
            hints[name] = PirHint(values=r.array(f"<u{width}", (m_rows, p.lwe_dim)))
        score_hints = [
            PirHint(values=r.array("<u8", (capacity, params["score"].lwe_dim)))
            for _ in range(k)
        ]
        if r.offset != len(data):
            raise ProtocolError(f"{len(data) - r.offset} trailing bytes in setup blob")
    except (struct.error, ValueError) as exc:
        raise ProtocolError(f"setup blob does not parse: {exc}") from exc
    except ProtocolError:
        raise
    except Exception as exc:  # truncation raises the file-level error type
        raise ProtocolError(f"setup blob does not parse: {exc}") from exc
    return ClientSetup(
        k=k,
        d=d,
        chunk_size=chunk_size,
        n_docs=n_docs,
        degree=degree,
        entry_col=entry_col,
        maxabs=maxabs,
        capacity=capacity,
        params=params,
        centroids=centroids,
        doc_ids=doc_ids,
        row_ids=row_ids,
        hints=hints,
        score_hints=score_hints,
    )
