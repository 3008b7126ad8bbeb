"""A small end-to-end sweep: quality, cost, and scaling in one table.

Runs the benchmark harness over two corpus sizes and all three systems,
prints the rows, and fits the communication-scaling lines that the full
sweep checks: downlink tracks the largest cluster, uplink tracks the
cluster count.
"""

from prag import BenchConfig, affine_r_squared, run_benchmark

config = BenchConfig(
    sizes=[300, 600],
    d=32,
    n_blobs=6,
    n_queries=8,
    topk=5,
    max_hops=4,
    beam=6,
    degree=8,
    chunk_size=128,
)

summary = run_benchmark(config, log=lambda msg: print("  " + msg))

print(f"\n{'system':9s} {'docs':>5s} {'k':>3s} {'ops':>6s} {'ndcg@5':>7s} "
      f"{'query ms':>9s} {'rag-ready ms':>12s}")
for row in summary["rows"]:
    print(f"{row['system']:9s} {row['n_docs']:5d} {row['k_clusters']:3d} "
          f"{row['pir_ops']:6.1f} {row['ndcg10']:7.3f} "
          f"{row['query_ms_mean']:9.2f} {row['rag_ready_query_ms']:12.2f}")

rag_rows = [r for r in summary["rows"] if r["system"] == "pir-rag"]
down = [r["downlink_bytes"] for r in rag_rows]
chunk_bytes = [summary["corpus_stats"][r["n_docs"]]["max_cluster_bytes"]
               for r in rag_rows]
ks = [r["k_clusters"] for r in rag_rows]
up = [r["uplink_bytes"] for r in rag_rows]
print(f"\npir-rag downlink {down} bytes vs largest-cluster bytes {chunk_bytes}")
print(f"pir-rag uplink {up} bytes vs cluster count {ks}")
if len(rag_rows) >= 2 and chunk_bytes[0] != chunk_bytes[1]:
    print(f"downlink-vs-cluster-bytes affine fit R^2 = "
          f"{affine_r_squared(chunk_bytes, down):.4f}")
    print(f"uplink-vs-k affine fit R^2 = {affine_r_squared(ks, up):.4f}")
