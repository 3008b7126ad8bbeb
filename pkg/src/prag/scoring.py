"""Encrypted similarity-scoring retrieval baseline.

The client routes to a cluster itself and names it in the clear; what stays
hidden is the query vector. Documents are quantized to signed bytes and held
as per-cluster matrices, every cluster padded to the same row capacity. The
server multiplies the encrypted quantized query into the chosen matrix and
returns encrypted integer dot products, which decode exactly: parameters
guarantee both the noise margin and that no achievable score wraps the
plaintext modulus.

Trade-off relative to the full private fetch: one cluster id leaks per
query, and ranking happens on quantized integers rather than float cosine.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFiniteInput, UnknownCluster
from .lwe import encrypt_against
from .modmath import centered


@dataclass(eq=False)
class ScoreMatrices:
    """Per-cluster quantized document matrices, uniformly padded."""

    matrices: np.ndarray  # (k, capacity, d) int32, signed quantized values
    row_ids: np.ndarray  # (k, capacity) int64 doc ids, -1 marks padding
    maxabs: float

    @property
    def k(self) -> int:
        return self.matrices.shape[0]

    @property
    def capacity(self) -> int:
        return self.matrices.shape[1]

    @property
    def d(self) -> int:
        return self.matrices.shape[2]


def quantize_embedding(vector: np.ndarray, maxabs: float) -> np.ndarray:
    """Map floats to signed bytes: clamp(round(v * 127 / maxabs), -127, 127)."""
    v = np.asarray(vector, dtype=np.float64)
    if not np.isfinite(v).all():
        raise NonFiniteInput("embedding contains NaN or infinite components")
    if not np.isfinite(maxabs) or maxabs < 0:
        raise NonFiniteInput(f"quantization scale must be finite and >= 0, got {maxabs}")
    scale = 127.0 / maxabs if maxabs > 0 else 0.0
    q = np.clip(np.rint(v * scale), -127, 127)
    return q.astype(np.int8)


def build_embedding_matrices(model, vectors: np.ndarray) -> ScoreMatrices:
    """Quantize every document into its cluster's matrix.

    `model` provides k and per-document cluster assignments. All matrices
    share the corpus-wide scale max |component| and are padded with zero
    rows to the largest cluster size.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n, d = vectors.shape
    if len(model.assignments) != n:
        raise DimensionMismatch(
            f"{len(model.assignments)} assignments for {n} vectors"
        )
    maxabs = float(np.max(np.abs(vectors))) if n else 0.0
    counts = np.bincount(model.assignments, minlength=model.k)
    capacity = int(counts.max()) if n else 0
    matrices = np.zeros((model.k, capacity, d), dtype=np.int32)
    row_ids = np.full((model.k, capacity), -1, dtype=np.int64)
    cursor = np.zeros(model.k, dtype=np.int64)
    for col, cluster in enumerate(np.asarray(model.assignments, dtype=np.int64)):
        row = int(cursor[cluster])
        matrices[cluster, row] = quantize_embedding(vectors[col], maxabs)
        row_ids[cluster, row] = int(model.doc_ids[col])
        cursor[cluster] += 1
    return ScoreMatrices(matrices=matrices, row_ids=row_ids, maxabs=maxabs)


def private_score(client, query_embedding: np.ndarray, cluster_id: int) -> list[tuple[int, int]]:
    """Score every document of one cluster under encryption.

    Returns (doc_id, integer score) pairs for the cluster's real rows; the
    decoded integers equal the plaintext quantized dot products exactly.
    `client` supplies the scoring parameters, per-cluster decode state, and
    the transport exchange.
    """
    if not 0 <= cluster_id < client.k:
        raise UnknownCluster(f"cluster {cluster_id} not in [0, {client.k})")
    params = client.score_params
    q8 = quantize_embedding(query_embedding, client.score_maxabs)
    if q8.shape[0] != params.n_cols:
        raise DimensionMismatch(
            f"query dim {q8.shape[0]} does not match scoring width {params.n_cols}"
        )
    u = q8.astype(np.int64) % params.plain_mod
    query = encrypt_against(params, client.score_mask, u, client.fresh_seed())
    raw = client.exchange_score(cluster_id, query)
    values = client.decode_score(cluster_id, raw)
    scores = centered(values, params.plain_mod)
    out = []
    for row, doc_id in enumerate(client.score_row_ids[cluster_id].tolist()):
        if doc_id >= 0:
            out.append((int(doc_id), int(scores[row])))
    return out


def select_topk_ids(scored: list[tuple[int, int]], topk: int) -> list[int]:
    """Top ids by descending score, ascending doc id on ties."""
    ranked = sorted(scored, key=lambda t: (-t[1], t[0]))
    return [doc_id for doc_id, _ in ranked[:topk]]
