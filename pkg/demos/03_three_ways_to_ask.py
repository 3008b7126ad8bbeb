"""One question, three private retrieval strategies.

pir-rag fetches the whole routed cluster in a single PIR operation, so the
content is already in hand.  The scored baseline asks the server to compute
encrypted per-document scores first, then fetches the winners one by one.
The graph baseline walks a k-NN graph with a fixed-shape beam search, then
fetches the winners.  Same corpus, same query, very different accounting.
"""

import numpy as np

from prag import (
    LocalTransport,
    PirClient,
    ServerState,
    build_index,
    exact_topk_oracle,
    gen_queries,
    gen_synthetic_corpus,
)

records = gen_synthetic_corpus(1200, d=48, n_blobs=10, rng_seed=21)
index = build_index(records, k=10, rng_seed=0)
client = PirClient(LocalTransport(ServerState(index)), key_seed=bytes(range(32)))

query = gen_queries(records, n_queries=1, noise=0.1, rng_seed=9)[0]
truth = exact_topk_oracle(query, records, 10)

print(f"{'system':10s} {'PIR ops':>8s} {'uplink':>10s} {'downlink':>10s} "
      f"{'hits/10':>8s}  top-3 docs")
for system in ("pir-rag", "scoring", "graph"):
    results, trace = client.query(
        query, system=system, topk=10, max_hops=4, beam=8, fetch_content=True
    )
    hits = len({r.doc_id for r in results} & set(truth))
    top3 = ", ".join(str(r.doc_id) for r in results[:3])
    print(f"{system:10s} {trace.pir_op_count:8d} {trace.uplink_bytes:9d}B "
          f"{trace.downlink_bytes:9d}B {hits:8d}  {top3}")

print("\nop-count identities: 1 (pir-rag), 1 + K (scoring), hops*beam + K (graph)")
print("every fetched document arrived under encryption; the server never "
      "learned the query,\nthe route, or which documents were read.")
