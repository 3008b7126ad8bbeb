"""Private document retrieval over clustered corpora.

A corpus is clustered offline, packed into byte matrices, and served through
a lattice-based private-retrieval protocol: the server learns nothing about
which cluster or document a query touches. Two baselines (private graph
traversal and encrypted similarity scoring) plus an evaluation harness ride
on the same encryption core.
"""

from . import errors
from .evalkit import (
    CSV_COLUMNS,
    BenchConfig,
    BenchRow,
    affine_r_squared,
    exact_topk_oracle,
    gen_queries,
    gen_synthetic_corpus,
    ndcg_at_k,
    precision_recall_at_k,
    run_benchmark,
    write_bench_csv,
)
from .framing import EmbeddingRecord, frame_docs, pack_cluster_bytes, unpack_cluster
from .graph import (
    NodeMatrix,
    TraversalState,
    build_knn_graph,
    decode_node_record,
    encode_node_records,
    medoid_entry,
    private_fetch_docs,
    private_search,
)
from .index import (
    BuiltIndex,
    ChunkMatrix,
    ClusterModel,
    DocMatrix,
    build_chunk_matrix,
    build_doc_matrix,
    build_index,
    kmeans_fit,
    load_corpus,
    load_index,
    save_index,
)
from .lwe import (
    ERR_BOUND,
    LWE_DIM,
    LweParams,
    PirAnswer,
    PirHint,
    PirQuery,
    SecretKey,
    answer,
    compute_hint,
    decode_raw,
    decode_values,
    derive_params,
    encrypt_vector,
    expand_matrix,
    keygen,
    sample_errors,
)
from .scoring import (
    ScoreMatrices,
    build_embedding_matrices,
    private_score,
    quantize_embedding,
    select_topk_ids,
)
from .service import (
    SYSTEM_GRAPH,
    SYSTEM_PIR_RAG,
    SYSTEM_SCORING,
    SYSTEMS,
    LocalTransport,
    PirClient,
    PirServer,
    QueryTrace,
    RankedResult,
    ServerState,
    SocketTransport,
    canonical_system,
    serve,
)
from .wire import ClientSetup, pack_frame, pack_setup_blob, split_frame, unpack_setup_blob

__all__ = [
    "CSV_COLUMNS",
    "ERR_BOUND",
    "LWE_DIM",
    "SYSTEM_GRAPH",
    "SYSTEM_PIR_RAG",
    "SYSTEM_SCORING",
    "SYSTEMS",
    "BenchConfig",
    "BenchRow",
    "BuiltIndex",
    "ChunkMatrix",
    "ClientSetup",
    "ClusterModel",
    "DocMatrix",
    "EmbeddingRecord",
    "LocalTransport",
    "LweParams",
    "NodeMatrix",
    "PirAnswer",
    "PirClient",
    "PirHint",
    "PirQuery",
    "PirServer",
    "QueryTrace",
    "RankedResult",
    "ScoreMatrices",
    "SecretKey",
    "ServerState",
    "SocketTransport",
    "TraversalState",
    "affine_r_squared",
    "answer",
    "build_chunk_matrix",
    "build_doc_matrix",
    "build_embedding_matrices",
    "build_index",
    "build_knn_graph",
    "canonical_system",
    "compute_hint",
    "decode_node_record",
    "decode_raw",
    "decode_values",
    "derive_params",
    "encode_node_records",
    "encrypt_vector",
    "errors",
    "exact_topk_oracle",
    "expand_matrix",
    "frame_docs",
    "gen_queries",
    "gen_synthetic_corpus",
    "keygen",
    "kmeans_fit",
    "load_corpus",
    "load_index",
    "medoid_entry",
    "ndcg_at_k",
    "pack_cluster_bytes",
    "pack_frame",
    "pack_setup_blob",
    "precision_recall_at_k",
    "private_fetch_docs",
    "private_score",
    "private_search",
    "quantize_embedding",
    "run_benchmark",
    "save_index",
    "select_topk_ids",
    "serve",
    "split_frame",
    "unpack_cluster",
    "unpack_setup_blob",
    "write_bench_csv",
]
