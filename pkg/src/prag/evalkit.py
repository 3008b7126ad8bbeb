"""Synthetic corpora, exact relevance ground truth, IR quality metrics, and
the benchmark sweep that measures all three retrieval systems side by side.

Judgments are binary: the exact cosine top-R over the full corpus, computed
by brute force. The sweep reports latency, communication, PIR-operation
counts, and quality per (system, corpus size) as CSV rows plus a JSON
summary; content-delivering accounting adds the measured per-document
fetches that the two baselines need before a document is actually in hand.
"""

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import InvalidConfig
from .framing import EmbeddingRecord
from .graph import private_fetch_docs
from .index import build_index
from .service import (
    SYSTEM_PIR_RAG,
    SYSTEMS,
    LocalTransport,
    PirClient,
    ServerState,
    canonical_system,
)

JUDGMENT_DEPTH = 10


# ---------------------------------------------------------------------------
# synthetic data


def _filler_text(doc_id: int, blob: int, length: int) -> str:
    if length <= 0:
        return ""
    pattern = f"synthetic record {doc_id} drawn from blob {blob}; "
    reps = -(-length // len(pattern))
    return (pattern * reps)[:length]


def gen_synthetic_corpus(
    n_docs: int,
    d: int = 64,
    n_blobs: int = 20,
    blob_std: float = 0.08,
    rng_seed: int = 0,
    text_len: int = 96,
) -> list[EmbeddingRecord]:
    """Gaussian-mixture corpus: unit-norm blob centers, per-blob noise,
    every embedding re-normalized. Deterministic per seed."""
    if n_docs < 1:
        raise InvalidConfig(f"need at least one document, got {n_docs}")
    if d < 1:
        raise InvalidConfig(f"embedding dim must be positive, got {d}")
    if not 1 <= n_blobs <= n_docs:
        raise InvalidConfig(f"n_blobs must be in [1, {n_docs}], got {n_blobs}")
    if blob_std < 0 or not math.isfinite(blob_std):
        raise InvalidConfig(f"blob_std must be finite and >= 0, got {blob_std}")
    if text_len < 0:
        raise InvalidConfig(f"text_len must be >= 0, got {text_len}")
    rng = np.random.default_rng(rng_seed)
    centers = rng.normal(size=(n_blobs, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    blob_of = rng.integers(0, n_blobs, size=n_docs)
    emb = centers[blob_of] + blob_std * rng.normal(size=(n_docs, d))
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = (emb / np.where(norms == 0.0, 1.0, norms)).astype(np.float32)
    return [
        EmbeddingRecord(
            doc_id=1000 + i,
            embedding=emb[i],
            text=_filler_text(1000 + i, int(blob_of[i]), text_len),
        )
        for i in range(n_docs)
    ]


def gen_queries(
    records: list[EmbeddingRecord],
    n_queries: int,
    noise: float = 0.25,
    rng_seed: int = 1,
) -> np.ndarray:
    """Perturbed corpus embeddings, re-normalized, so relevant documents
    exist by construction."""
    if n_queries < 1:
        raise InvalidConfig(f"need at least one query, got {n_queries}")
    if noise < 0 or not math.isfinite(noise):
        raise InvalidConfig(f"query noise must be finite and >= 0, got {noise}")
    rng = np.random.default_rng(rng_seed)
    d = records[0].embedding.shape[0]
    picks = rng.integers(0, len(records), size=n_queries)
    queries = np.stack(
        [records[int(p)].embedding.astype(np.float64) for p in picks]
    ) + noise * rng.normal(size=(n_queries, d))
    norms = np.linalg.norm(queries, axis=1, keepdims=True)
    return queries / np.where(norms == 0.0, 1.0, norms)


def exact_topk_oracle(
    query: np.ndarray, records: list[EmbeddingRecord], topk: int = JUDGMENT_DEPTH
) -> list[int]:
    """Exhaustive float-cosine scan; descending score, ascending id on ties."""
    q = np.asarray(query, dtype=np.float64)
    qnorm = np.linalg.norm(q)
    unit = q / (qnorm if qnorm else 1.0)
    vectors = np.stack([r.embedding.astype(np.float64) for r in records])
    norms = np.linalg.norm(vectors, axis=1)
    scores = (vectors @ unit) / np.where(norms == 0.0, 1.0, norms)
    ids = np.array([r.doc_id for r in records], dtype=np.int64)
    order = np.lexsort((ids, -scores))
    return ids[order[: min(topk, len(records))]].tolist()


# ---------------------------------------------------------------------------
# quality metrics


def ndcg_at_k(ranked_ids, relevant_ids, k: int) -> float:
    """Binary-relevance NDCG@k; the ideal puts every relevant doc first."""
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    relevant = set(relevant_ids)
    dcg = sum(
        1.0 / math.log2(rank + 1)
        for rank, doc_id in enumerate(list(ranked_ids)[:k], start=1)
        if doc_id in relevant
    )
    ideal_hits = min(k, len(relevant))
    idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, ideal_hits + 1))
    return dcg / idcg if idcg > 0 else 0.0


def precision_recall_at_k(ranked_ids, relevant_ids, k: int) -> tuple[float, float]:
    """Binary precision and recall over the top k."""
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    relevant = set(relevant_ids)
    hits = sum(1 for doc_id in list(ranked_ids)[:k] if doc_id in relevant)
    precision = hits / k
    recall = hits / len(relevant) if relevant else 0.0
    return precision, recall


def affine_r_squared(x, y) -> float:
    """Coefficient of determination for the least-squares line through (x, y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] < 2 or np.ptp(x) == 0.0:
        raise InvalidConfig("an affine fit needs at least two distinct x values")
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = float(np.sum((y - y.mean()) ** 2))
    if total == 0.0:
        return 1.0
    return 1.0 - float(np.sum(residual**2)) / total


# ---------------------------------------------------------------------------
# benchmark sweep


@dataclass
class BenchConfig:
    """Sweep shape; also the schema of the flat json config file."""

    sizes: list[int] = field(default_factory=lambda: [500, 1000, 2000, 4000])
    systems: list[str] = field(default_factory=lambda: list(SYSTEMS))
    d: int = 64
    k_clusters: int | None = None  # None picks round(sqrt(n)) per size
    topk: int = 10
    # The sweep's walk budget is deeper than the interactive per-query default
    # (4 hops x 8 beam): quality comparisons need the walk to actually cover
    # the neighborhood the exact rerank sees, which takes ~hops*beam >= 128
    # fetches at these corpus sizes.
    max_hops: int = 10
    beam: int = 24
    degree: int = 16
    n_queries: int = 20
    n_blobs: int = 20
    blob_std: float = 0.08
    query_noise: float = 0.25
    text_len: int = 96
    chunk_size: int = 256
    rng_seed: int = 0

    @classmethod
    def from_file(cls, path) -> "BenchConfig":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if not isinstance(obj, dict):
            raise InvalidConfig("bench config must be a flat json object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise InvalidConfig(f"unknown bench config keys: {', '.join(unknown)}")
        config = replace(cls(), **obj)
        config.systems = [canonical_system(s) for s in config.systems]
        return config


CSV_COLUMNS = (
    "system",
    "n_docs",
    "k_clusters",
    "setup_ms",
    "query_ms_mean",
    "query_ms_p50",
    "query_ms_p95",
    "uplink_bytes",
    "downlink_bytes",
    "setup_bytes",
    "pir_ops",
    "rag_ready_query_ms",
    "ndcg10",
    "precision10",
    "recall10",
)


@dataclass
class BenchRow:
    system: str
    n_docs: int
    k_clusters: int
    setup_ms: float
    query_ms_mean: float
    query_ms_p50: float
    query_ms_p95: float
    uplink_bytes: float
    downlink_bytes: float
    setup_bytes: int
    pir_ops: float
    rag_ready_query_ms: float
    ndcg10: float
    precision10: float
    recall10: float


def _measure_cell(
    client: PirClient,
    system: str,
    queries: np.ndarray,
    judgments: list[list[int]],
    config: BenchConfig,
) -> dict:
    """Run every query under one system; returns per-query series."""
    retrieval_ms, rag_ms, up, down, ops = [], [], [], [], []
    ndcg, precision, recall = [], [], []
    for query, judged in zip(queries, judgments):
        results, trace = client.query(
            query,
            system=system,
            topk=config.topk,
            max_hops=config.max_hops,
            beam=config.beam,
            fetch_content=False,
        )
        ids = [r.doc_id for r in results]
        query_up = trace.uplink_bytes
        query_down = trace.downlink_bytes
        query_ops = trace.pir_op_count
        content_ms = 0.0
        if system != SYSTEM_PIR_RAG:
            # Fetch exactly topk documents even when retrieval returned
            # fewer, matching the fixed-shape content stage of the client.
            fetch_ids = list(ids)
            if len(fetch_ids) < config.topk:
                filler = fetch_ids[0] if fetch_ids else int(client.setup.doc_ids[0])
                fetch_ids += [filler] * (config.topk - len(fetch_ids))
            up0 = client.transport.uplink_bytes
            down0 = client.transport.downlink_bytes
            t0 = time.perf_counter()
            private_fetch_docs(client, fetch_ids)
            content_ms = (time.perf_counter() - t0) * 1000.0
            query_up += client.transport.uplink_bytes - up0
            query_down += client.transport.downlink_bytes - down0
            query_ops += len(fetch_ids)
        retrieval_ms.append(trace.total_ms)
        rag_ms.append(trace.total_ms + content_ms)
        up.append(query_up)
        down.append(query_down)
        ops.append(query_ops)
        ndcg.append(ndcg_at_k(ids, judged, JUDGMENT_DEPTH))
        p, r = precision_recall_at_k(ids, judged, JUDGMENT_DEPTH)
        precision.append(p)
        recall.append(r)
    return {
        "retrieval_ms": retrieval_ms,
        "rag_ms": rag_ms,
        "uplink": up,
        "downlink": down,
        "ops": ops,
        "ndcg": ndcg,
        "precision": precision,
        "recall": recall,
    }


def run_benchmark(
    config: BenchConfig,
    csv_path=None,
    json_path=None,
    log=None,
) -> dict:
    """Sweep (system x corpus size); returns the summary also written to disk.

    A failing cell is recorded under "failures" and the sweep continues.
    """
    say = log if log is not None else (lambda _msg: None)
    rows: list[BenchRow] = []
    failures: list[dict] = []
    corpus_stats: dict[int, dict] = {}

    for n_docs in config.sizes:
        try:
            records = gen_synthetic_corpus(
                n_docs,
                d=config.d,
                n_blobs=config.n_blobs,
                blob_std=config.blob_std,
                rng_seed=config.rng_seed,
                text_len=config.text_len,
            )
            k = config.k_clusters or int(round(math.sqrt(n_docs)))
            t0 = time.perf_counter()
            index = build_index(
                records,
                k=k,
                chunk_size=config.chunk_size,
                rng_seed=config.rng_seed,
                degree=config.degree,
            )
            build_ms = (time.perf_counter() - t0) * 1000.0
            state = ServerState(index)
            queries = gen_queries(
                records,
                config.n_queries,
                noise=config.query_noise,
                rng_seed=config.rng_seed + 1,
            )
            judgments = [exact_topk_oracle(q, records) for q in queries]
        except Exception as exc:  # noqa: BLE001 - sweep must continue
            failures.append({"system": "*", "n_docs": n_docs, "error": repr(exc)})
            say(f"corpus size {n_docs}: FAILED ({exc!r})")
            continue
        corpus_stats[n_docs] = {
            "k_clusters": index.k,
            "max_cluster_bytes": index.chunk.m_rows,
            "chunk_count": index.chunk.n_chunks,
            "build_ms": build_ms,
        }
        say(f"built index: n={n_docs} k={index.k} ({build_ms:.0f} ms)")

        for system in config.systems:
            try:
                client = PirClient(LocalTransport(state))
                series = _measure_cell(client, system, queries, judgments, config)
                client.close()
                rows.append(
                    BenchRow(
                        system=system,
                        n_docs=n_docs,
                        k_clusters=index.k,
                        setup_ms=build_ms + client.setup_ms,
                        query_ms_mean=float(np.mean(series["retrieval_ms"])),
                        query_ms_p50=float(np.percentile(series["retrieval_ms"], 50)),
                        query_ms_p95=float(np.percentile(series["retrieval_ms"], 95)),
                        uplink_bytes=float(np.mean(series["uplink"])),
                        downlink_bytes=float(np.mean(series["downlink"])),
                        setup_bytes=client.setup_bytes,
                        pir_ops=float(np.mean(series["ops"])),
                        rag_ready_query_ms=float(np.mean(series["rag_ms"])),
                        ndcg10=float(np.mean(series["ndcg"])),
                        precision10=float(np.mean(series["precision"])),
                        recall10=float(np.mean(series["recall"])),
                    )
                )
                say(
                    f"  {system}: ndcg10={rows[-1].ndcg10:.3f} "
                    f"rag_ready={rows[-1].rag_ready_query_ms:.1f} ms"
                )
            except Exception as exc:  # noqa: BLE001 - sweep must continue
                failures.append(
                    {"system": system, "n_docs": n_docs, "error": repr(exc)}
                )
                say(f"  {system}: FAILED ({exc!r})")

    summary = {
        "config": asdict(config),
        "rows": [asdict(row) for row in rows],
        "corpus_stats": corpus_stats,
        "failures": failures,
    }
    if csv_path is not None:
        write_bench_csv(rows, csv_path)
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary


def write_bench_csv(rows: list[BenchRow], path) -> None:
    """Frozen column order so downstream plots stay regenerable."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            record = asdict(row)
            writer.writerow([record[column] for column in CSV_COLUMNS])
