"""The private pipeline returns exactly what a plaintext one would.

Build a clustered index over a synthetic corpus, query it through the full
encrypted path (route to a cluster, PIR-fetch that cluster, rerank
locally), and compare against routing + reranking done entirely in the
clear.  The two must agree id-for-id, in order.
"""

import numpy as np

from prag import (
    LocalTransport,
    PirClient,
    ServerState,
    build_index,
    gen_queries,
    gen_synthetic_corpus,
)

records = gen_synthetic_corpus(600, d=32, n_blobs=8, rng_seed=11)
index = build_index(records, k=12, rng_seed=0)
client = PirClient(LocalTransport(ServerState(index)), key_seed=bytes(range(32)))

vectors = np.stack([r.embedding.astype(np.float64) for r in records])
ids = np.array([r.doc_id for r in records])
centroids = client.setup.centroids.astype(np.float64)

queries = gen_queries(records, n_queries=25, noise=0.3, rng_seed=4)
agree = 0
for q in queries:
    unit = q / np.linalg.norm(q)

    # plaintext reference: same routing rule, exact cosine rerank over the
    # routed cluster's published membership
    cid = int(np.argmax(centroids @ unit))
    member_ids = [int(i) for i in client.setup.row_ids[cid] if i >= 0]
    col = {int(i): j for j, i in enumerate(ids)}
    members = np.array([col[i] for i in member_ids])
    sims = vectors[members] @ unit / np.linalg.norm(vectors[members], axis=1)
    reference = [int(i) for i, _ in sorted(zip(ids[members], sims), key=lambda t: (-t[1], t[0]))][:10]

    results, trace = client.query(q, system="pir-rag", topk=10)
    private = [r.doc_id for r in results]
    agree += private == reference

print(f"private top-10 identical to plaintext top-10: {agree}/25 queries")
print(f"each query cost exactly {trace.pir_op_count} PIR operation "
      f"({trace.downlink_bytes} answer bytes, content included)")
assert agree == 25
