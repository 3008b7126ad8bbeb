"""Offline index construction: cluster the corpus, pack it into matrices,
derive encryption parameters, and persist the whole bundle.

The server ends up hosting four private-fetch surfaces built here: the
cluster chunk matrix (one cluster per column), the document matrix (one
document per column), the graph node matrix, and the per-cluster quantized
scoring matrices. Everything a client needs to decode (parameters, seeds,
hints, centroids, id maps) is part of the same bundle.
"""

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    CorrectnessMarginViolated,
    DimensionMismatch,
    DuplicateId,
    InvalidConfig,
    InvalidK,
    ParseError,
    TruncatedFile,
    VersionUnsupported,
)
from .framing import EmbeddingRecord, frame_docs, pack_cluster_bytes
from .graph import (
    DEFAULT_DEGREE,
    NodeMatrix,
    build_knn_graph,
    encode_node_records,
    medoid_entry,
)
from .lwe import LweParams, PirHint, compute_hint, derive_params, expand_matrix
from .scoring import ScoreMatrices, build_embedding_matrices

INDEX_MAGIC = b"PRAG1"
INDEX_VERSION = 1
DEFAULT_CHUNK_SIZE = 256

FETCH_PLAIN_MOD = 256
SCORE_PLAIN_MOD = 1 << 26


# ---------------------------------------------------------------------------
# corpus loading


def load_corpus(path) -> list[EmbeddingRecord]:
    """Read a jsonl corpus: one {"id", "embedding", "text"} object per line.

    A leading {"dim", "count"} manifest line is honoured when present.
    """
    records: list[EmbeddingRecord] = []
    seen: set[int] = set()
    manifest: dict | None = None
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid json: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"line {lineno}: expected an object")
            if lineno == 1 and "id" not in obj and "dim" in obj:
                manifest = obj
                continue
            records.append(_parse_record(obj, lineno))
            rec = records[-1]
            if rec.doc_id in seen:
                raise DuplicateId(f"line {lineno}: doc id {rec.doc_id} repeated")
            seen.add(rec.doc_id)
            if dim is None:
                dim = rec.embedding.shape[0]
            elif rec.embedding.shape[0] != dim:
                raise DimensionMismatch(
                    f"line {lineno}: embedding dim {rec.embedding.shape[0]} != {dim}"
                )
    if manifest is not None:
        if dim is not None and manifest.get("dim") != dim:
            raise DimensionMismatch(
                f"manifest dim {manifest.get('dim')} != corpus dim {dim}"
            )
        if manifest.get("count") != len(records):
            raise ParseError(
                f"manifest count {manifest.get('count')} != {len(records)} records"
            )
    return records


def _parse_record(obj: dict, lineno: int) -> EmbeddingRecord:
    try:
        doc_id = obj["id"]
        embedding = obj["embedding"]
        text = obj["text"]
    except KeyError as exc:
        raise ParseError(f"line {lineno}: missing field {exc}") from exc
    if isinstance(doc_id, bool) or not isinstance(doc_id, int) or doc_id < 0:
        raise ParseError(f"line {lineno}: id must be a non-negative integer")
    if not isinstance(text, str):
        raise ParseError(f"line {lineno}: text must be a string")
    if not isinstance(embedding, list) or not embedding:
        raise ParseError(f"line {lineno}: embedding must be a non-empty array")
    try:
        vec = np.asarray(embedding, dtype=np.float32)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"line {lineno}: embedding is not numeric") from exc
    if vec.ndim != 1:
        raise ParseError(f"line {lineno}: embedding must be flat")
    if not np.isfinite(vec).all():
        raise ParseError(f"line {lineno}: embedding has non-finite components")
    return EmbeddingRecord(doc_id=doc_id, embedding=vec, text=text)


# ---------------------------------------------------------------------------
# clustering


@dataclass(eq=False)
class ClusterModel:
    """Routing metadata: centroids plus the document -> cluster map."""

    k: int
    centroids: np.ndarray  # (k, d)
    assignments: np.ndarray  # (n_docs,) int32
    doc_ids: np.ndarray | None = None  # column order, filled by build_index
    objective: float = float("nan")
    history: list[float] = field(default_factory=list)


def kmeans_fit(
    vectors: np.ndarray,
    k: int,
    rng_seed: int = 0,
    max_iters: int = 50,
    tol: float = 1e-4,
) -> ClusterModel:
    """Standard Lloyd iterations from a distance-weighted seeding.

    Deterministic for a fixed seed; empty clusters are reseeded with the
    point currently farthest from its own centroid, which keeps the
    sum-of-squares objective non-increasing.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise InvalidK(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(rng_seed)
    centroids = _plusplus_init(x, k, rng)
    history: list[float] = []
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        d2 = _sq_dists(x, centroids)
        assign = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), assign]
        for cluster in range(k):
            if not np.any(assign == cluster):
                far = int(np.argmax(point_d2))
                assign[far] = cluster
                centroids[cluster] = x[far]
                point_d2[far] = 0.0
        history.append(float(point_d2.sum()))
        new_centroids = centroids.copy()
        for cluster in range(k):
            members = assign == cluster
            if np.any(members):
                new_centroids[cluster] = x[members].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments=assign.astype(np.int32),
        objective=history[-1],
        history=history,
    )


def _plusplus_init(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[int(rng.integers(n))]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            pick = int(rng.integers(n))
        centroids[i] = x[pick]
        d2 = np.minimum(d2, np.sum((x - centroids[i]) ** 2, axis=1))
    return centroids


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x - c||^2 expanded; clip the tiny negatives float cancellation leaves
    d2 = (
        np.sum(x**2, axis=1)[:, None]
        - 2.0 * (x @ centroids.T)
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


# ---------------------------------------------------------------------------
# matrix packing


@dataclass(eq=False)
class ChunkMatrix:
    """Every cluster as one byte column, all padded to the widest cluster."""

    entries: np.ndarray  # (n_chunks * chunk_size, k) uint8
    chunk_size: int

    @property
    def m_rows(self) -> int:
        return self.entries.shape[0]

    @property
    def n_cols(self) -> int:
        return self.entries.shape[1]

    @property
    def n_chunks(self) -> int:
        return self.m_rows // self.chunk_size


@dataclass(eq=False)
class DocMatrix:
    """Every document as one byte column, padded to the longest document."""

    entries: np.ndarray  # (m_rows, n_docs) uint8
    doc_ids: np.ndarray  # (n_docs,) uint64, column order

    @property
    def m_rows(self) -> int:
        return self.entries.shape[0]

    @property
    def n_cols(self) -> int:
        return self.entries.shape[1]


def build_chunk_matrix(
    model: ClusterModel,
    records: list[EmbeddingRecord],
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> ChunkMatrix:
    """Pack each cluster's documents (corpus order) into its column."""
    groups: list[list[EmbeddingRecord]] = [[] for _ in range(model.k)]
    for rec, cluster in zip(records, model.assignments):
        groups[int(cluster)].append(rec)
    streams = [frame_docs(group) for group in groups]
    target_chunks = max(1, max(-(-len(s) // chunk_size) for s in streams))
    entries = np.zeros((target_chunks * chunk_size, model.k), dtype=np.uint8)
    for cluster, group in enumerate(groups):
        padded = pack_cluster_bytes(group, chunk_size, target_chunks)
        entries[:, cluster] = np.frombuffer(padded, dtype=np.uint8)
    return ChunkMatrix(entries=entries, chunk_size=chunk_size)


def build_doc_matrix(records: list[EmbeddingRecord]) -> DocMatrix:
    """One single-document stream per column, zero-padded to the longest."""
    streams = [frame_docs([rec]) for rec in records]
    width = max(len(s) for s in streams)
    entries = np.zeros((width, len(records)), dtype=np.uint8)
    for col, stream in enumerate(streams):
        entries[:len(stream), col] = np.frombuffer(stream, dtype=np.uint8)
    doc_ids = np.array([rec.doc_id for rec in records], dtype=np.uint64)
    return DocMatrix(entries=entries, doc_ids=doc_ids)


# ---------------------------------------------------------------------------
# full bundle


@dataclass(eq=False)
class BuiltIndex:
    """Everything the server hosts and the client setup hands out."""

    model: ClusterModel
    chunk: ChunkMatrix
    doc: DocMatrix
    node: NodeMatrix
    score: ScoreMatrices
    params: dict[str, LweParams]  # keys: cluster, doc, node, score
    hints: dict[str, PirHint]  # keys: cluster, doc, node
    score_hints: list[PirHint]  # one per cluster, same order

    @property
    def k(self) -> int:
        return self.model.k

    @property
    def d(self) -> int:
        return self.score.d

    @property
    def n_docs(self) -> int:
        return self.doc.n_cols

    @property
    def chunk_size(self) -> int:
        return self.chunk.chunk_size


def _matrix_seed(rng_seed: int, label: str) -> bytes:
    digest = hashlib.sha256()
    digest.update(b"prag/matrix-seed/")
    digest.update(label.encode())
    digest.update(struct.pack("<q", rng_seed))
    return digest.digest()


def _byte_matrix_params(n_cols: int, seed: bytes) -> LweParams:
    """Fetch-profile params, widening the word when 32 bits cannot hold
    the correctness margin for a matrix this wide."""
    try:
        return derive_params(n_cols, FETCH_PLAIN_MOD, "fetch", a_seed=seed)
    except CorrectnessMarginViolated:
        return derive_params(
            n_cols, FETCH_PLAIN_MOD, "fetch", a_seed=seed, cipher_mod_bits=64
        )


def build_index(
    records: list[EmbeddingRecord],
    k: int | None = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    rng_seed: int = 0,
    degree: int = DEFAULT_DEGREE,
) -> BuiltIndex:
    """Cluster, pack, parameterize, and precompute hints for a corpus."""
    n = len(records)
    if n < 2:
        raise InvalidConfig("an index needs at least two documents")
    dims = {rec.embedding.shape[0] for rec in records}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed embedding dims {sorted(dims)}")
    d = dims.pop()
    vectors = np.stack([rec.embedding for rec in records]).astype(np.float64)
    if k is None:
        k = int(round(math.sqrt(n)))
    k = max(1, min(k, n))

    model = kmeans_fit(vectors, k, rng_seed=rng_seed)
    norms = np.linalg.norm(model.centroids, axis=1, keepdims=True)
    model.centroids = (model.centroids / np.where(norms == 0.0, 1.0, norms)).astype(
        np.float32
    )
    model.doc_ids = np.array([rec.doc_id for rec in records], dtype=np.uint64)

    chunk = build_chunk_matrix(model, records, chunk_size)
    doc = build_doc_matrix(records)

    degree_eff = max(1, min(degree, n - 1))
    neighbors = build_knn_graph(vectors, degree_eff)
    score = build_embedding_matrices(model, vectors)
    node_entries = encode_node_records(doc.doc_ids, neighbors, vectors, score.maxabs)
    node = NodeMatrix(
        entries=node_entries,
        degree=degree_eff,
        entry_col=medoid_entry(vectors),
        maxabs=score.maxabs,
    )

    params = {
        "cluster": _byte_matrix_params(k, _matrix_seed(rng_seed, "cluster")),
        "doc": _byte_matrix_params(n, _matrix_seed(rng_seed, "doc")),
        "node": _byte_matrix_params(n, _matrix_seed(rng_seed, "node")),
        "score": derive_params(
            d, SCORE_PLAIN_MOD, "scoring", a_seed=_matrix_seed(rng_seed, "score")
        ),
    }
    hints = {
        "cluster": compute_hint(chunk.entries, params["cluster"].expand_a()),
        "doc": compute_hint(doc.entries, params["doc"].expand_a()),
        "node": compute_hint(node.entries, params["node"].expand_a()),
    }
    score_a = params["score"].expand_a()
    score_hints = [compute_hint(score.matrices[j], score_a) for j in range(k)]
    return BuiltIndex(
        model=model,
        chunk=chunk,
        doc=doc,
        node=node,
        score=score,
        params=params,
        hints=hints,
        score_hints=score_hints,
    )


# ---------------------------------------------------------------------------
# persistence

_HEADER = struct.Struct("<IIIQIIdI")
_PARAM_BLOCK = struct.Struct("<IIBQIB32s")
_PROFILE_CODES = {"fetch": 0, "scoring": 1}
_PROFILE_NAMES = {code: name for name, code in _PROFILE_CODES.items()}
_PARAM_ORDER = ("cluster", "doc", "node", "score")


def save_index(index: BuiltIndex, path) -> None:
    """Write the bundle; byte-for-byte deterministic for a given index."""
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<H", INDEX_VERSION))
        fh.write(
            _HEADER.pack(
                index.k,
                index.d,
                index.chunk_size,
                index.n_docs,
                index.node.degree,
                index.node.entry_col,
                index.node.maxabs,
                index.score.capacity,
            )
        )
        for name in _PARAM_ORDER:
            p = index.params[name]
            fh.write(
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
        fh.write(np.ascontiguousarray(index.model.centroids, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(index.model.assignments, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(index.doc.doc_ids, dtype="<u8").tobytes())
        for matrix in (index.chunk.entries, index.doc.entries, index.node.entries):
            fh.write(struct.pack("<Q", matrix.shape[0]))
            fh.write(np.ascontiguousarray(matrix, dtype=np.uint8).tobytes())
        fh.write(np.ascontiguousarray(index.score.matrices, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(index.score.row_ids, dtype="<i8").tobytes())
        for name in ("cluster", "doc", "node"):
            width = index.params[name].cipher_mod_bits // 8
            fh.write(
                np.ascontiguousarray(index.hints[name].values, dtype=f"<u{width}").tobytes()
            )
        for hint in index.score_hints:
            fh.write(np.ascontiguousarray(hint.values, dtype="<u8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise TruncatedFile(
                f"needed {n} bytes at offset {self.offset}, file has {len(self.data)}"
            )
        out = self.data[self.offset:self.offset + n]
        self.offset += n
        return out

    def unpack(self, s: struct.Struct):
        return s.unpack(self.take(s.size))

    def array(self, dtype: str, shape: tuple) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        width = np.dtype(dtype).itemsize
        raw = self.take(count * width)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def load_index(path) -> BuiltIndex:
    """Read a bundle written by save_index."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(len(INDEX_MAGIC)) != INDEX_MAGIC:
        raise BadMagic(f"not an index file: expected magic {INDEX_MAGIC!r}")
    (version,) = struct.unpack("<H", r.take(2))
    if version > INDEX_VERSION:
        raise VersionUnsupported(f"index version {version} is newer than {INDEX_VERSION}")
    k, d, chunk_size, n_docs, degree, entry_col, maxabs, capacity = r.unpack(_HEADER)

    params: dict[str, LweParams] = {}
    for name in _PARAM_ORDER:
        n_cols, lwe_dim, bits, plain_mod, err_bound, code, seed = r.unpack(_PARAM_BLOCK)
        if code not in _PROFILE_NAMES:
            raise ParseError(f"unknown profile code {code}")
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
    assignments = r.array("<u4", (n_docs,)).astype(np.int32)
    doc_ids = r.array("<u8", (n_docs,))
    matrices = []
    for n_cols in (k, n_docs, n_docs):
        (m_rows,) = struct.unpack("<Q", r.take(8))
        matrices.append(r.array("u1", (m_rows, n_cols)))
    chunk_entries, doc_entries, node_entries = matrices
    score_matrices = r.array("<i4", (k, capacity, d))
    row_ids = r.array("<i8", (k, capacity))
    hints: dict[str, PirHint] = {}
    for name, matrix in (("cluster", chunk_entries), ("doc", doc_entries), ("node", node_entries)):
        p = params[name]
        width = p.cipher_mod_bits // 8
        hints[name] = PirHint(values=r.array(f"<u{width}", (matrix.shape[0], p.lwe_dim)))
    score_hints = [
        PirHint(values=r.array("<u8", (capacity, params["score"].lwe_dim)))
        for _ in range(k)
    ]
    if r.offset != len(data):
        raise ParseError(f"{len(data) - r.offset} trailing bytes after index payload")

    model = ClusterModel(
        k=k,
        centroids=centroids,
        assignments=assignments,
        doc_ids=doc_ids,
    )
    return BuiltIndex(
        model=model,
        chunk=ChunkMatrix(entries=chunk_entries, chunk_size=chunk_size),
        doc=DocMatrix(entries=doc_entries, doc_ids=doc_ids),
        node=NodeMatrix(
            entries=node_entries, degree=degree, entry_col=entry_col, maxabs=maxabs
        ),
        score=ScoreMatrices(
            matrices=score_matrices, row_ids=row_ids, maxabs=maxabs
        ),
        params=params,
        hints=hints,
        score_hints=score_hints,
    )
