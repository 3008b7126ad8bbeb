"""Private graph-traversal retrieval baseline.

An exact k-nearest-neighbour digraph is built over the corpus offline. Each
node is encoded as one fixed-width matrix column:

    [u64 doc_id][d quantized bytes, stored value + 128][degree * u32 neighbor columns]

so fetching any node is one private column fetch and every answer has the
same shape. The client walks the graph itself: fetch a frontier, score the
quantized vectors locally against its query, expand to unexplored
neighbours. The walk always performs exactly max_hops * beam fetches,
padding with re-fetches of nodes it already holds, so the server observes a
constant access pattern regardless of where the walk actually went.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FramingError, InvalidDegree, InvalidEntryPoint, UnknownDocId
from .framing import unpack_cluster
from .scoring import quantize_embedding

DEFAULT_DEGREE = 16
DEFAULT_HOPS = 4
DEFAULT_BEAM = 8

_NODE_HEAD = struct.Struct("<Q")


@dataclass(eq=False)
class NodeMatrix:
    """All node records as one byte matrix, one node per column."""

    entries: np.ndarray  # (8 + d + 4 * degree, n_nodes) uint8
    degree: int
    entry_col: int  # corpus medoid, the fixed traversal start
    maxabs: float  # quantization scale shared with the scoring baseline

    @property
    def n_nodes(self) -> int:
        return self.entries.shape[1]


@dataclass
class TraversalState:
    """Walk bookkeeping, returned alongside results for inspection."""

    frontier: list[tuple[int, float]] = field(default_factory=list)
    visited: dict[int, float] = field(default_factory=dict)
    hops: int = 0
    fetches: int = 0


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    out = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return out / np.where(norms == 0.0, 1.0, norms)


def build_knn_graph(vectors: np.ndarray, degree: int) -> np.ndarray:
    """Exact cosine top-degree neighbours per node, brute force.

    Directed: lists are not symmetrized. Ties break toward the lower
    column index so rebuilds are reproducible.
    """
    n = len(vectors)
    if not 1 <= degree <= n - 1:
        raise InvalidDegree(f"degree must be in [1, {n - 1}], got {degree}")
    unit = _unit_rows(vectors)
    neighbors = np.empty((n, degree), dtype=np.int64)
    cols = np.arange(n)
    block = max(1, min(512, (1 << 24) // max(n, 1)))
    for start in range(0, n, block):
        stop = min(n, start + block)
        sims = unit[start:stop] @ unit.T
        sims[cols[start:stop] - start, cols[start:stop]] = -np.inf  # drop self
        # lexsort is stable: secondary key column index, primary -similarity
        for i in range(stop - start):
            order = np.lexsort((cols, -sims[i]))
            neighbors[start + i] = order[:degree]
    return neighbors


def medoid_entry(vectors: np.ndarray) -> int:
    """Column of the corpus medoid: highest mean cosine to all vectors."""
    unit = _unit_rows(vectors)
    return int(np.argmax(unit @ unit.mean(axis=0)))


def encode_node_records(
    doc_ids: np.ndarray,
    neighbors: np.ndarray,
    vectors: np.ndarray,
    maxabs: float,
) -> np.ndarray:
    """Pack nodes into the fixed-width column format described above."""
    n, degree = neighbors.shape
    d = vectors.shape[1]
    width = 8 + d + 4 * degree
    entries = np.empty((width, n), dtype=np.uint8)
    for col in range(n):
        q = quantize_embedding(vectors[col], maxabs)
        raw = (
            _NODE_HEAD.pack(int(doc_ids[col]))
            + (q.astype(np.int16) + 128).astype(np.uint8).tobytes()
            + neighbors[col].astype("<u4").tobytes()
        )
        entries[:, col] = np.frombuffer(raw, dtype=np.uint8)
    return entries


def decode_node_record(raw: bytes, d: int, degree: int) -> tuple[int, np.ndarray, np.ndarray]:
    """Inverse of one encode_node_records column."""
    want = 8 + d + 4 * degree
    if len(raw) < want:
        raise FramingError(f"node record is {len(raw)} bytes, expected {want}")
    (doc_id,) = _NODE_HEAD.unpack_from(raw, 0)
    q = np.frombuffer(raw, dtype=np.uint8, count=d, offset=8).astype(np.int16) - 128
    neigh = np.frombuffer(raw, dtype="<u4", count=degree, offset=8 + d).astype(np.int64)
    return doc_id, q.astype(np.int8), neigh


def _score(query_unit: np.ndarray, qvec: np.ndarray) -> float:
    v = qvec.astype(np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return 0.0
    return float(query_unit @ v) / norm


def private_search(
    client,
    query_embedding: np.ndarray,
    entry_col: int | None = None,
    max_hops: int = DEFAULT_HOPS,
    beam: int = DEFAULT_BEAM,
    topk: int = 10,
) -> tuple[list[tuple[int, float]], TraversalState]:
    """Beam walk over the private graph; constant fetch shape.

    `client` must offer fetch_node(col) -> raw record bytes plus graph
    metadata (n_nodes, node entry column, d, degree). Returns the topk
    (doc_id, score) pairs over every node actually scored, plus the state.
    Exactly max_hops * beam fetch operations are issued.
    """
    meta_n = client.n_nodes
    if entry_col is None:
        entry_col = client.entry_col
    if not 0 <= entry_col < meta_n:
        raise InvalidEntryPoint(f"entry column {entry_col} not in [0, {meta_n})")
    q = np.asarray(query_embedding, dtype=np.float64)
    qnorm = np.linalg.norm(q)
    query_unit = q / (qnorm if qnorm else 1.0)

    state = TraversalState()
    fetched: dict[int, tuple[int, float, np.ndarray]] = {}  # col -> (doc_id, score, neighbors)
    # candidate priority: best parent's score; entry outranks everything
    pool: dict[int, float] = {entry_col: np.inf}

    for _ in range(max_hops):
        ranked = sorted(pool.items(), key=lambda t: (-t[1], t[0]))
        batch = [col for col, _ in ranked[:beam]]
        if len(batch) < beam:
            filler = _dummy_col(fetched, entry_col)
            batch += [filler] * (beam - len(batch))
        for col in batch:
            raw = client.fetch_node(col)
            state.fetches += 1
            if col in fetched:
                continue  # dummy or repeated fetch, already scored
            doc_id, qvec, neigh = decode_node_record(raw, client.d, client.graph_degree)
            score = _score(query_unit, qvec)
            fetched[col] = (doc_id, score, neigh)
            pool.pop(col, None)
            for nb in neigh.tolist():
                if nb not in fetched:
                    pool[nb] = max(pool.get(nb, -np.inf), score)
        state.hops += 1

    state.visited = {col: score for col, (_, score, _) in fetched.items()}
    ranked_nodes = sorted(
        ((doc_id, score) for doc_id, score, _ in fetched.values()),
        key=lambda t: (-t[1], t[0]),
    )
    state.frontier = [
        (col, score) for col, score in sorted(
            state.visited.items(), key=lambda t: (-t[1], t[0])
        )[:beam]
    ]
    return ranked_nodes[:topk], state


def _dummy_col(fetched: dict, entry_col: int) -> int:
    """Deterministic padding target: best already-fetched node, else entry."""
    if not fetched:
        return entry_col
    return min(fetched.items(), key=lambda t: (-t[1][1], t[0]))[0]


def private_fetch_docs(client, doc_ids: list[int]) -> list:
    """Fetch full documents one private column fetch each.

    Shared by both baselines for the content phase that follows retrieval.
    """
    out = []
    for doc_id in doc_ids:
        col = client.doc_column(doc_id)
        if col is None:
            raise UnknownDocId(f"doc id {doc_id} is not in the index")
        stream = client.fetch_doc(col)
        docs = unpack_cluster(stream, client.d)
        if len(docs) != 1 or docs[0].doc_id != doc_id:
            raise FramingError(f"document column {col} did not frame doc {doc_id}")
        out.append(docs[0])
    return out
