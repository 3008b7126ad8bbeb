"""Top-level guarantees of the stack, one test per guarantee.

Every test here states a single externally visible claim -- exact decode,
noise margin, plaintext equivalence, quality ordering, scaling shape,
operation accounting, oblivious answer sizes, serialization robustness,
metric fixtures -- and checks it at its stated tolerance.  `pytest -v`
therefore prints one verdict line per guarantee; each test also prints a
summary line with the measured numbers.

The heavyweight fixtures (a 5,000-document benchmark cell and a
2,000-document private pipeline) are module-scoped and shared between the
tests that need them.
"""

from __future__ import annotations

import csv
import json
import socket
import struct
import threading
import time

import numpy as np
import pytest

from prag.errors import (
    CorrectnessMarginViolated,
    DimensionMismatch,
    DuplicateId,
    ParseError,
)
from prag.evalkit import (
    BenchConfig,
    affine_r_squared,
    ndcg_at_k,
    precision_recall_at_k,
    run_benchmark,
)
from prag.framing import EmbeddingRecord
from prag.index import build_index, load_corpus, load_index, save_index
from prag.lwe import (
    answer,
    compute_hint,
    decode_raw,
    derive_params,
    encrypt_vector,
    keygen,
)
from prag.scoring import private_score, quantize_embedding
from prag.service import LocalTransport, PirClient, PirServer, ServerState, SocketTransport
from prag.evalkit import gen_queries, gen_synthetic_corpus
from prag.wire import MSG_ERROR, pack_frame, split_frame


def _verdict(claim: str, detail: str) -> None:
    print(f"PASS  {claim}: {detail}")


# ---------------------------------------------------------------------------
# shared heavy fixtures


@pytest.fixture(scope="module")
def bench5000(tmp_path_factory):
    """One full benchmark cell: 5,000 documents, 100 judged queries, all
    three systems, results also written to CSV.  Shared by the quality
    ordering and operation accounting tests."""
    out = tmp_path_factory.mktemp("bench5000")
    csv_path = out / "bench.csv"
    config = BenchConfig(sizes=[5000], n_queries=100)
    summary = run_benchmark(config, csv_path=csv_path)
    return config, summary, csv_path


@pytest.fixture(scope="module")
def pipeline2000():
    """A 2,000-document, d=64, k=45 clustered corpus served over the
    in-process transport, plus 100 judged queries."""
    records = gen_synthetic_corpus(2000, d=64, n_blobs=20, rng_seed=33)
    index = build_index(records, k=45, rng_seed=33)
    client = PirClient(LocalTransport(ServerState(index)), key_seed=bytes(range(32)))
    queries = gen_queries(records, n_queries=100, noise=0.25, rng_seed=12)
    return records, index, client, queries


# ---------------------------------------------------------------------------
# exact decode, at scale and under randomized shapes


class TestPrivateFetchCorrectness:
    def test_thousand_randomized_roundtrips_decode_exactly(self):
        """1,000 random byte matrices (up to 512x128), random selector each:
        the decoded column equals the plaintext column exactly, every time,
        in under 60 seconds."""
        rng = np.random.default_rng(20260822)
        start = time.perf_counter()
        for trial in range(1000):
            rows = int(rng.integers(1, 513))
            cols = int(rng.integers(1, 129))
            database = rng.integers(0, 256, size=(rows, cols), dtype=np.uint8)
            params = derive_params(cols, 256, "fetch", a_seed=rng.bytes(32))
            a_matrix = params.expand_a()
            hint = compute_hint(database, a_matrix)
            sk = keygen(params, rng.bytes(32))
            wanted = int(rng.integers(0, cols))
            selector = np.zeros(cols, dtype=np.int64)
            selector[wanted] = 1
            query = encrypt_vector(params, sk, a_matrix, selector, rng.bytes(32))
            decoded = decode_raw(answer(database, query), hint, sk)
            shift = params.cipher_mod_bits - (params.plain_mod.bit_length() - 1)
            values = ((decoded + params.dtype.type(params.delta // 2)) >> params.dtype.type(shift)).astype(np.int64)
            assert np.array_equal(values % params.plain_mod, database[:, wanted].astype(np.int64)), (
                f"trial {trial}: decoded column differs at shape {rows}x{cols}"
            )
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"1000 round-trips took {elapsed:.1f}s (budget 60s)"
        _verdict(
            "randomized fetch decodes exactly",
            f"1000/1000 round-trips bit-exact in {elapsed:.1f}s",
        )


class TestNoiseMargin:
    def test_observed_noise_stays_under_analytic_bound(self):
        """Ten thousand decodings at the content-fetch parameters: the raw
        accumulated noise never reaches the analytic worst case
        n_cols * 255 * 8, which itself sits below the rounding margin."""
        n_rows, n_cols, n_queries = 100, 128, 100
        rng = np.random.default_rng(5)
        database = rng.integers(0, 256, size=(n_rows, n_cols), dtype=np.uint8)
        params = derive_params(n_cols, 256, "fetch", a_seed=rng.bytes(32))
        a_matrix = params.expand_a()
        hint = compute_hint(database, a_matrix)
        bound = n_cols * 255 * 8
        assert bound < params.delta // 2  # the margin the parameters promise

        ring = 1 << params.cipher_mod_bits
        worst = 0
        for _ in range(n_queries):
            sk = keygen(params, rng.bytes(32))
            selector = np.zeros(n_cols, dtype=np.int64)
            selector[int(rng.integers(0, n_cols))] = 1
            query = encrypt_vector(params, sk, a_matrix, selector, rng.bytes(32))
            raw = decode_raw(answer(database, query), hint, sk).astype(np.int64)
            expected = (database.astype(np.int64) @ selector) * params.delta % ring
            diff = (raw - expected) % ring
            noise = np.where(diff >= ring // 2, diff - ring, diff)
            worst = max(worst, int(np.abs(noise).max()))
        assert worst < bound, f"observed noise {worst} >= analytic bound {bound}"

        # the same derivation must refuse a matrix too wide for the margin
        with pytest.raises(CorrectnessMarginViolated):
            derive_params(8192, 256, "fetch")

        _verdict(
            "noise stays inside the analytic margin",
            f"max |noise| {worst} < {bound} over {n_rows * n_queries} decodings; "
            f"8192-wide fetch refused",
        )


# ---------------------------------------------------------------------------
# the private pipelines agree with plaintext computation


class TestPlaintextEquivalence:
    def test_private_retrieval_matches_plaintext_rerank(self, pipeline2000):
        """Route + encrypted cluster fetch + local rerank returns the
        identical top-10 (ids, in order) as a fully plaintext
        route-and-rerank over the same corpus, for 100/100 queries."""
        records, index, client, queries = pipeline2000
        vectors = np.stack([r.embedding.astype(np.float64) for r in records])
        ids = np.array([r.doc_id for r in records])
        centroids = index.model.centroids.astype(np.float64)
        assignments = index.model.assignments

        agree = 0
        for q in queries:
            unit = q / np.linalg.norm(q)
            cid = int(np.argmax(centroids @ unit))
            members = np.flatnonzero(assignments == cid)
            sims = vectors[members] @ unit / np.linalg.norm(vectors[members], axis=1)
            reference = [
                int(i)
                for i, _ in sorted(zip(ids[members], sims), key=lambda t: (-t[1], t[0]))
            ][:10]
            results, _ = client.query(q, system="pir-rag", topk=10)
            assert [r.doc_id for r in results] == reference
            agree += 1
        _verdict(
            "private retrieval equals plaintext rerank",
            f"{agree}/100 queries identical top-10, ids and order",
        )

    def test_encrypted_scores_equal_quantized_dot_products(self, pipeline2000):
        """Decoded per-document scores equal the plaintext quantized dot
        products exactly, for 100 queries spread across every cluster."""
        records, index, client, queries = pipeline2000
        by_id = {r.doc_id: r for r in records}
        maxabs = index.score.maxabs
        covered: set[int] = set()
        checked = 0
        for i, q in enumerate(queries):
            cid = i % index.k
            covered.add(cid)
            got = dict(private_score(client, q, cid))
            q8 = quantize_embedding(q, maxabs).astype(np.int64)
            member_ids = [
                int(doc_id)
                for doc_id, a in zip(index.model.doc_ids, index.model.assignments)
                if a == cid
            ]
            expected = {}
            for doc_id in member_ids:
                d8 = quantize_embedding(by_id[doc_id].embedding, maxabs).astype(np.int64)
                expected[doc_id] = int(q8 @ d8)
            assert got == expected, f"query {i}, cluster {cid}: scores differ"
            checked += len(expected)
        assert covered == set(range(index.k))
        _verdict(
            "encrypted scores are exact",
            f"100 queries, all {index.k} clusters, {checked} document scores equal "
            f"plaintext quantized dot products",
        )


# ---------------------------------------------------------------------------
# retrieval quality and cost accounting on the benchmark cell


class TestQualityOrdering:
    def test_graph_beats_rag_beats_scoring_on_clustered_corpus(self, bench5000):
        """On 5,000 clustered documents with 100 oracle-judged queries, mean
        NDCG@10 orders graph >= pir-rag >= scoring with a graph-scoring gap
        of at least 0.05 -- and the three values land in the CSV report."""
        _, summary, csv_path = bench5000
        with open(csv_path, newline="") as fh:
            csv_rows = {row["system"]: row for row in csv.DictReader(fh)}
        assert set(csv_rows) == {"pir-rag", "scoring", "graph"}
        ndcg = {name: float(row["ndcg10"]) for name, row in csv_rows.items()}

        mem_rows = {r["system"]: r for r in summary["rows"]}
        for name in ndcg:
            assert ndcg[name] == pytest.approx(mem_rows[name]["ndcg10"], abs=1e-9)

        assert ndcg["graph"] >= ndcg["pir-rag"] >= ndcg["scoring"]
        gap = ndcg["graph"] - ndcg["scoring"]
        assert gap >= 0.05, f"graph-scoring NDCG gap {gap:.4f} < 0.05"
        _verdict(
            "quality ordering holds",
            f"NDCG@10 graph {ndcg['graph']:.4f} >= pir-rag {ndcg['pir-rag']:.4f} "
            f">= scoring {ndcg['scoring']:.4f}; gap {gap:.4f} >= 0.05 (CSV-reported)",
        )


class TestOperationAccounting:
    def test_op_counts_exact_and_rag_ready_latency_wins(self, bench5000):
        """Per content-delivering query the measured PIR-operation counts are
        exactly 1 (pir-rag), 1+K (scoring), and hops*beam+K (graph); and the
        RAG-ready per-query latency of pir-rag beats both baselines."""
        config, summary, _ = bench5000
        rows = {r["system"]: r for r in summary["rows"]}
        k = config.topk
        expected_ops = {
            "pir-rag": 1.0,
            "scoring": 1.0 + k,
            "graph": float(config.max_hops * config.beam + k),
        }
        for name, want in expected_ops.items():
            got = rows[name]["pir_ops"]
            assert got == want, f"{name}: mean PIR ops {got} != {want}"

        latency = {name: rows[name]["rag_ready_query_ms"] for name in rows}
        assert latency["pir-rag"] < latency["scoring"]
        assert latency["pir-rag"] < latency["graph"]
        _verdict(
            "operation accounting exact, rag-ready latency minimal",
            f"ops 1 / {int(expected_ops['scoring'])} / {int(expected_ops['graph'])} exact; "
            f"rag-ready ms pir-rag {latency['pir-rag']:.1f} < scoring "
            f"{latency['scoring']:.1f} and graph {latency['graph']:.1f}",
        )


class TestCommunicationScaling:
    def test_downlink_and_uplink_fit_affine_models(self, tmp_path):
        """Across 500..4000 documents at k=round(sqrt N), per-query downlink
        is affine in the padded cluster byte size and uplink is affine in
        the cluster count, both with R-squared above 0.99."""
        config = BenchConfig(
            sizes=[500, 1000, 2000, 4000], systems=["pir-rag"], n_queries=3
        )
        summary = run_benchmark(config, csv_path=tmp_path / "scaling.csv")
        rows = sorted(summary["rows"], key=lambda r: r["n_docs"])
        stats = summary["corpus_stats"]

        max_bytes = [stats[r["n_docs"]]["max_cluster_bytes"] for r in rows]
        downlink = [r["downlink_bytes"] for r in rows]
        ks = [r["k_clusters"] for r in rows]
        uplink = [r["uplink_bytes"] for r in rows]

        for n, k in zip([r["n_docs"] for r in rows], ks):
            assert k == round(np.sqrt(n))
        assert downlink == sorted(downlink) and downlink[0] < downlink[-1]

        r2_down = affine_r_squared(max_bytes, downlink)
        r2_up = affine_r_squared(ks, uplink)
        assert r2_down > 0.99, f"downlink vs max-cluster-bytes R^2 {r2_down:.4f}"
        assert r2_up > 0.99, f"uplink vs cluster-count R^2 {r2_up:.4f}"
        _verdict(
            "communication scales affinely",
            f"downlink~max-cluster-bytes R^2 {r2_down:.4f}, uplink~k R^2 {r2_up:.4f} "
            f"over sizes {[r['n_docs'] for r in rows]}",
        )


# ---------------------------------------------------------------------------
# the answer shape reveals nothing about the selector


class TestObliviousAnswers:
    def test_answer_size_constant_across_selectors_and_skew(self, pipeline2000):
        """Every cluster selector produces a byte-identical answer length on
        a fixed index, and a corpus whose cluster populations differ by 10x
        still produces one constant answer size."""
        _, index, client, _ = pipeline2000
        transport = client.transport
        sizes = set()
        for cid in range(index.k):
            before = transport.downlink_bytes
            client.fetch_cluster(cid)
            sizes.add(transport.downlink_bytes - before)
        assert len(sizes) == 1, f"answer sizes varied across selectors: {sorted(sizes)}"

        # planted 10x population skew: 300 documents in one blob, 30 in another
        rng = np.random.default_rng(3)
        d = 16
        docs = []
        for i in range(300):
            v = rng.normal(0, 0.05, d); v[0] += 3.0
            docs.append(EmbeddingRecord(i, (v / np.linalg.norm(v)).astype(np.float32), f"dense {i}"))
        for i in range(30):
            v = rng.normal(0, 0.05, d); v[0] -= 3.0
            docs.append(EmbeddingRecord(300 + i, (v / np.linalg.norm(v)).astype(np.float32), f"sparse {i}"))
        skewed = build_index(docs, k=2, rng_seed=0)
        counts = np.bincount(skewed.model.assignments, minlength=2)
        ratio = counts.max() / counts.min()
        assert ratio >= 10.0, f"cluster population ratio {ratio:.1f} < 10"

        skew_client = PirClient(
            LocalTransport(ServerState(skewed)), key_seed=bytes(32)
        )
        skew_sizes = set()
        for cid in range(2):
            before = skew_client.transport.downlink_bytes
            skew_client.fetch_cluster(cid)
            skew_sizes.add(skew_client.transport.downlink_bytes - before)
        assert len(skew_sizes) == 1, f"skewed index leaked size: {sorted(skew_sizes)}"
        _verdict(
            "answers are size-oblivious",
            f"one answer size across all {index.k} selectors; {counts.max()}/"
            f"{counts.min()} = {ratio:.1f}x population skew still one size",
        )


# ---------------------------------------------------------------------------
# serialization, corpus validation, and wire robustness


class TestSerializationAndRobustness:
    def test_index_saves_bitwise_and_bad_inputs_fail_typed(self, tmp_path):
        """Index files round-trip bitwise; corpus files with planted defects
        raise the matching typed error; random frames thrown at a live
        server always end in an error frame or a clean disconnect, and the
        server keeps serving correctly afterwards."""
        records = gen_synthetic_corpus(120, d=16, n_blobs=4, rng_seed=2)
        index = build_index(records, k=6, rng_seed=2)

        p1, p2 = tmp_path / "a.idx", tmp_path / "b.idx"
        save_index(index, p1)
        save_index(load_index(p1), p2)
        b1, b2 = p1.read_bytes(), p2.read_bytes()
        assert b1 == b2, "save -> load -> save changed the file"

        good = {"id": 0, "text": "t", "embedding": [0.1, 0.2]}
        fixtures = [
            ('{"id": 1, broken', ParseError),
            ('{"text": "t", "embedding": [0.1]}', ParseError),
            ('{"id": -4, "text": "t", "embedding": [0.1]}', ParseError),
            ('{"id": 1, "text": "t", "embedding": [0.1, "x"]}', ParseError),
            ('{"id": 1, "text": "t", "embedding": [0.1, NaN]}', ParseError),
            (json.dumps(good), DuplicateId),  # second record reuses id 0
            ('{"id": 2, "text": "t", "embedding": [0.1, 0.2, 0.3]}', DimensionMismatch),
        ]
        typed = 0
        for i, (bad_line, err) in enumerate(fixtures):
            path = tmp_path / f"corpus{i}.jsonl"
            path.write_text(json.dumps(good) + "\n" + bad_line + "\n")
            with pytest.raises(err):
                load_corpus(path)
            typed += 1

        server = PirServer(index, ("127.0.0.1", 0))
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            rng = np.random.default_rng(99)
            outcomes = {"error-frame": 0, "disconnect": 0}
            for _ in range(150):
                with socket.create_connection(server.address, timeout=5) as sock:
                    choice = int(rng.integers(0, 3))
                    if choice == 0:  # well-framed garbage type + payload
                        payload = rng.bytes(int(rng.integers(0, 2048)))
                        sock.sendall(pack_frame(int(rng.integers(0, 256)), payload))
                    elif choice == 1:  # raw random bytes, framing not respected
                        sock.sendall(rng.bytes(int(rng.integers(1, 64))))
                        sock.shutdown(socket.SHUT_WR)
                    else:  # header promising more than the inbound cap
                        sock.sendall(struct.pack("<I", (1 << 24) + 1) + b"\x03")
                    # read exactly one reply frame; garbage may legitimately
                    # leave the connection open after the error reply
                    back = b""
                    try:
                        while True:
                            if len(back) >= 4:
                                # length field counts type byte + payload
                                need = 4 + struct.unpack("<I", back[:4])[0]
                                if len(back) >= need:
                                    break
                            chunk = sock.recv(4096)
                            if not chunk:
                                break
                            back += chunk
                    except (ConnectionResetError, TimeoutError):
                        pass
                    if back:
                        msg_type, _ = split_frame(back)
                        assert msg_type == MSG_ERROR
                        outcomes["error-frame"] += 1
                    else:
                        outcomes["disconnect"] += 1

            # the server must still answer real queries exactly
            transport = SocketTransport(*server.address)
            try:
                survivor = PirClient(transport, key_seed=bytes(range(32)))
                target = records[7]
                results, _ = survivor.query(target.embedding, system="pir-rag", topk=1)
                assert results[0].doc_id == target.doc_id
            finally:
                transport.close()
        finally:
            server.shutdown()
            thread.join(timeout=5)
        _verdict(
            "serialization and wire robustness hold",
            f"bitwise index round-trip; {typed} typed corpus errors; 150 fuzz "
            f"frames -> {outcomes['error-frame']} error frames + "
            f"{outcomes['disconnect']} clean disconnects, server exact afterwards",
        )


# ---------------------------------------------------------------------------
# the metrics themselves


class TestMetricFixtures:
    def test_ndcg_worked_example_and_hand_counted_precision_recall(self):
        """The frozen NDCG@3 worked example lands within 1e-5, and twenty
        hand-counted precision/recall fixtures match exactly."""
        assert ndcg_at_k([99, 1, 2], {1, 2}, 3) == pytest.approx(0.69343, abs=1e-5)

        # (ranked, relevant, k, precision, recall), each counted by hand
        fixtures = [
            ([1, 2, 3], {1, 2, 3}, 3, 1.0, 1.0),
            ([1, 2, 3], {4, 5}, 3, 0.0, 0.0),
            ([1, 2, 3], {1}, 3, 1 / 3, 1.0),
            ([1, 2, 3], {1, 9}, 3, 1 / 3, 1 / 2),
            ([1, 2, 3, 4], {2, 4}, 4, 2 / 4, 1.0),
            ([1, 2, 3, 4], {2, 4}, 2, 1 / 2, 1 / 2),
            ([9, 8, 7], {7}, 1, 0.0, 0.0),
            ([7, 8, 9], {7}, 1, 1.0, 1.0),
            ([5], {5, 6, 7}, 1, 1.0, 1 / 3),
            ([5], {5, 6, 7}, 3, 1 / 3, 1 / 3),
            ([], {1, 2}, 2, 0.0, 0.0),
            ([1, 2], set(), 2, 0.0, 0.0),
            ([1, 2, 3, 4, 5], {1, 3, 5}, 5, 3 / 5, 1.0),
            ([1, 2, 3, 4, 5], {1, 3, 5}, 4, 2 / 4, 2 / 3),
            ([1, 2, 3, 4, 5], {1, 3, 5}, 1, 1.0, 1 / 3),
            ([10, 20, 30], {20}, 2, 1 / 2, 1.0),
            ([10, 20, 30], {30, 40, 50, 60}, 3, 1 / 3, 1 / 4),
            ([2, 4, 6, 8], {1, 2, 3, 4}, 4, 2 / 4, 2 / 4),
            ([2, 4, 6, 8], {8}, 4, 1 / 4, 1.0),
            ([1], {1}, 5, 1 / 5, 1.0),
        ]
        assert len(fixtures) == 20
        for ranked, relevant, k, want_p, want_r in fixtures:
            got_p, got_r = precision_recall_at_k(ranked, relevant, k)
            assert got_p == want_p and got_r == want_r, (
                f"P/R@{k} of {ranked} vs {relevant}: got ({got_p}, {got_r}), "
                f"counted ({want_p}, {want_r})"
            )
        _verdict(
            "metric fixtures exact",
            "NDCG@3 worked example within 1e-5; 20/20 hand-counted "
            "precision/recall fixtures exact",
        )


# ---------------------------------------------------------------------------
# the embedding tool (optional companion; this suite must pass without it)


class TestEmbeddingToolContract:
    def test_embed_output_validates_loads_and_is_unit_norm(self, tmp_path):
        """When the embedding tool is installed, its output passes its own
        schema validator, loads through this package's corpus loader, and
        every vector is unit-norm within 1e-5.  Skips cleanly when the tool
        is absent -- nothing here may depend on it."""
        embed_tool = pytest.importorskip(
            "embed_tool", reason="embedding tool not installed; core suite stands alone"
        )

        raw = tmp_path / "raw.jsonl"
        lines = [
            json.dumps({"id": i, "text": f"document number {i} about topic {i % 5}"})
            for i in range(40)
        ]
        raw.write_text("\n".join(lines) + "\n")

        out = tmp_path / "corpus.jsonl"
        embed_tool.embed_corpus(raw, "hashing:48", out)
        report = embed_tool.validate_schema(out)
        assert report.ok, f"validator rejected tool output: {report.violations}"

        records = load_corpus(out)
        assert [r.doc_id for r in records] == list(range(40))
        worst = 0.0
        for rec in records:
            worst = max(worst, abs(float(np.linalg.norm(rec.embedding)) - 1.0))
        assert worst <= 1e-5, f"norm deviated by {worst}"
        _verdict(
            "embedding tool interoperates",
            f"40 records validated, loaded, and unit-norm (worst deviation {worst:.2e})",
        )
