"""Tests for synthetic corpora, the relevance oracle, metrics, and the sweep."""

import csv
import json
import math

import numpy as np
import pytest

from oracles import naive_cosine, naive_ndcg, naive_precision_recall, naive_rank
from prag.errors import InvalidConfig
from prag.evalkit import (
    CSV_COLUMNS,
    BenchConfig,
    affine_r_squared,
    exact_topk_oracle,
    gen_queries,
    gen_synthetic_corpus,
    ndcg_at_k,
    precision_recall_at_k,
    run_benchmark,
)
from prag.index import kmeans_fit


class TestSyntheticCorpus:
    def test_shapes_and_norms(self):
        records = gen_synthetic_corpus(50, d=16, n_blobs=5, rng_seed=2, text_len=40)
        assert len(records) == 50
        assert len({r.doc_id for r in records}) == 50
        assert records[0].doc_id == 1000
        for rec in records:
            assert rec.embedding.shape == (16,)
            assert np.linalg.norm(rec.embedding) == pytest.approx(1.0, abs=1e-6)
            assert len(rec.text) == 40

    def test_deterministic(self):
        a = gen_synthetic_corpus(30, d=8, rng_seed=7, n_blobs=3)
        b = gen_synthetic_corpus(30, d=8, rng_seed=7, n_blobs=3)
        for ra, rb in zip(a, b):
            assert ra.doc_id == rb.doc_id
            assert np.array_equal(ra.embedding, rb.embedding)
            assert ra.text == rb.text

    def test_zero_std_collapses_blobs(self):
        records = gen_synthetic_corpus(40, d=8, n_blobs=3, blob_std=0.0, rng_seed=4)
        distinct = {rec.embedding.tobytes() for rec in records}
        assert len(distinct) == 3

    def test_two_blobs_recoverable_by_kmeans(self):
        records = gen_synthetic_corpus(400, d=32, n_blobs=2, blob_std=0.05, rng_seed=5)
        vectors = np.stack([r.embedding.astype(np.float64) for r in records])
        model = kmeans_fit(vectors, 2, rng_seed=1)
        # blob identity from the zero-noise regeneration with the same seed
        clean = gen_synthetic_corpus(400, d=32, n_blobs=2, blob_std=0.0, rng_seed=5)
        blob_key = {}
        labels = []
        for rec in clean:
            key = rec.embedding.tobytes()
            blob_key.setdefault(key, len(blob_key))
            labels.append(blob_key[key])
        labels = np.array(labels)
        agree = np.sum(model.assignments == labels)
        assert max(agree, 400 - agree) >= 396

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_docs": 0},
            {"n_docs": 10, "n_blobs": 11},
            {"n_docs": 10, "n_blobs": 0},
            {"n_docs": 10, "d": 0},
            {"n_docs": 10, "blob_std": -0.1},
            {"n_docs": 10, "text_len": -1},
        ],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(InvalidConfig):
            gen_synthetic_corpus(**kwargs)


class TestQueries:
    def test_unit_norm_and_deterministic(self):
        records = gen_synthetic_corpus(30, d=8, n_blobs=3, rng_seed=1)
        q1 = gen_queries(records, 12, noise=0.3, rng_seed=9)
        q2 = gen_queries(records, 12, noise=0.3, rng_seed=9)
        assert q1.shape == (12, 8)
        assert np.array_equal(q1, q2)
        assert np.allclose(np.linalg.norm(q1, axis=1), 1.0, atol=1e-12)

    def test_invalid(self):
        records = gen_synthetic_corpus(10, d=4, n_blobs=2, rng_seed=1)
        with pytest.raises(InvalidConfig):
            gen_queries(records, 0)
        with pytest.raises(InvalidConfig):
            gen_queries(records, 5, noise=-1.0)


class TestExactOracle:
    def test_identity_query_ranks_first(self):
        records = gen_synthetic_corpus(60, d=8, n_blobs=6, rng_seed=3)
        target = records[17]
        got = exact_topk_oracle(target.embedding, records, 5)
        assert got[0] == target.doc_id

    def test_full_depth_is_permutation(self):
        records = gen_synthetic_corpus(25, d=8, n_blobs=5, rng_seed=4)
        got = exact_topk_oracle(np.ones(8), records, 25)
        assert sorted(got) == sorted(r.doc_id for r in records)

    def test_ties_break_by_id(self):
        records = gen_synthetic_corpus(10, d=4, n_blobs=2, blob_std=0.0, rng_seed=5)
        ranked = exact_topk_oracle(records[0].embedding, records, 10)
        # blob mates share one embedding: their ids must appear ascending
        same = [r.doc_id for r in records if
                np.array_equal(r.embedding, records[0].embedding)]
        assert ranked[: len(same)] == sorted(same)

    def test_agrees_with_naive_oracle(self):
        rng = np.random.default_rng(6)
        records = gen_synthetic_corpus(40, d=8, n_blobs=4, rng_seed=6)
        ids = [r.doc_id for r in records]
        for _ in range(100):
            query = rng.normal(size=8)
            scores = [
                naive_cosine(query.tolist(), r.embedding.tolist()) for r in records
            ]
            assert exact_topk_oracle(query, records, 7) == naive_rank(ids, scores, 7)


class TestNdcg:
    def test_frozen_worked_example(self):
        # hits at ranks 2 and 3 of a depth-3 list, two relevant docs total
        value = ndcg_at_k([99, 1, 2], {1, 2}, 3)
        dcg = 1 / math.log2(3) + 1 / math.log2(4)
        idcg = 1 + 1 / math.log2(3)
        assert value == pytest.approx(dcg / idcg, abs=1e-12)
        assert value == pytest.approx(0.69343, abs=1e-5)

    def test_perfect_and_zero(self):
        assert ndcg_at_k([3, 1, 2], {1, 2, 3}, 3) == pytest.approx(1.0)
        assert ndcg_at_k([4, 5, 6], {1, 2, 3}, 3) == 0.0
        assert ndcg_at_k([1, 2], set(), 2) == 0.0

    def test_oracle_ranking_scores_one(self):
        records = gen_synthetic_corpus(40, d=8, n_blobs=4, rng_seed=7)
        judged = exact_topk_oracle(np.ones(8), records, 10)
        assert ndcg_at_k(judged, judged, 10) == pytest.approx(1.0)

    def test_matches_naive(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            ranked = rng.permutation(20)[: rng.integers(1, 15)].tolist()
            relevant = set(rng.permutation(20)[: rng.integers(0, 10)].tolist())
            k = int(rng.integers(1, 12))
            assert ndcg_at_k(ranked, relevant, k) == pytest.approx(
                naive_ndcg(ranked, relevant, k), abs=1e-12
            )

    def test_k_validated(self):
        with pytest.raises(InvalidConfig):
            ndcg_at_k([1], {1}, 0)


class TestPrecisionRecall:
    def test_forced_cases(self):
        assert precision_recall_at_k([1, 2, 3], {1, 2, 3, 4, 5}, 3) == (1.0, 3 / 5)
        assert precision_recall_at_k([7, 8], {1, 2}, 2) == (0.0, 0.0)
        assert precision_recall_at_k([1], set(), 1) == (0.0, 0.0)

    def test_matches_naive(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            ranked = rng.permutation(15)[: rng.integers(1, 12)].tolist()
            relevant = set(rng.permutation(15)[: rng.integers(0, 8)].tolist())
            k = int(rng.integers(1, 10))
            assert precision_recall_at_k(ranked, relevant, k) == naive_precision_recall(
                ranked, relevant, k
            )


class TestAffineFit:
    def test_perfect_line(self):
        assert affine_r_squared([1, 2, 3, 4], [3, 5, 7, 9]) == pytest.approx(1.0)

    def test_frozen_partial_fit(self):
        # least squares on (0,0),(1,1),(2,4): slope 2, intercept -1/3
        assert affine_r_squared([0, 1, 2], [0, 1, 4]) == pytest.approx(
            12 / 13, abs=1e-12
        )

    def test_constant_y(self):
        assert affine_r_squared([1, 2, 3], [5, 5, 5]) == pytest.approx(1.0)

    def test_degenerate_x(self):
        with pytest.raises(InvalidConfig):
            affine_r_squared([2, 2, 2], [1, 2, 3])
        with pytest.raises(InvalidConfig):
            affine_r_squared([1], [1])


class TestBenchConfig:
    def test_from_file(self, tmp_path):
        path = tmp_path / "bench.json"
        path.write_text(
            json.dumps(
                {
                    "sizes": [40, 80],
                    "systems": ["pir-rag", "tiptoe"],
                    "d": 8,
                    "n_queries": 4,
                }
            )
        )
        config = BenchConfig.from_file(path)
        assert config.sizes == [40, 80]
        assert config.systems == ["pir-rag", "scoring"]
        assert config.d == 8
        assert config.topk == 10  # untouched default

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"sizzes": [10]}))
        with pytest.raises(InvalidConfig):
            BenchConfig.from_file(path)

    def test_non_object(self, tmp_path):
        path = tmp_path / "bad2.json"
        path.write_text("[1,2]")
        with pytest.raises(InvalidConfig):
            BenchConfig.from_file(path)


@pytest.fixture(scope="module")
def small_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    config = BenchConfig(
        sizes=[40, 80],
        d=8,
        n_blobs=4,
        n_queries=4,
        topk=3,
        max_hops=2,
        beam=3,
        degree=4,
        chunk_size=64,
        blob_std=0.2,
    )
    summary = run_benchmark(
        config, csv_path=out / "results.csv", json_path=out / "results.json"
    )
    return config, summary, out


class TestBenchmark:
    def test_row_grid_complete(self, small_sweep):
        _, summary, _ = small_sweep
        assert summary["failures"] == []
        got = {(row["system"], row["n_docs"]) for row in summary["rows"]}
        assert got == {
            (s, n) for s in ("pir-rag", "graph", "scoring") for n in (40, 80)
        }

    def test_op_counts(self, small_sweep):
        _, summary, _ = small_sweep
        for row in summary["rows"]:
            want = {"pir-rag": 1.0, "scoring": 1 + 3, "graph": 2 * 3 + 3}[row["system"]]
            assert row["pir_ops"] == want

    def test_quality_in_range(self, small_sweep):
        _, summary, _ = small_sweep
        for row in summary["rows"]:
            for metric in ("ndcg10", "precision10", "recall10"):
                assert 0.0 <= row[metric] <= 1.0
            assert row["rag_ready_query_ms"] >= row["query_ms_mean"] or row[
                "system"
            ] == "pir-rag"

    def test_csv_schema(self, small_sweep):
        _, summary, out = small_sweep
        with open(out / "results.csv", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            body = list(reader)
        assert tuple(header) == CSV_COLUMNS
        assert len(body) == len(summary["rows"])
        for line in body:
            assert len(line) == len(CSV_COLUMNS)

    def test_json_summary_fields(self, small_sweep):
        _, _, out = small_sweep
        with open(out / "results.json") as fh:
            obj = json.load(fh)
        assert set(obj) == {"config", "rows", "corpus_stats", "failures"}
        assert obj["corpus_stats"]["40"]["max_cluster_bytes"] % 64 == 0

    def test_failed_size_marked_and_sweep_continues(self, tmp_path):
        config = BenchConfig(
            sizes=[10, 40],
            d=8,
            n_blobs=16,  # more blobs than the first corpus has documents
            n_queries=2,
            topk=2,
            max_hops=1,
            beam=2,
            degree=3,
            chunk_size=64,
        )
        summary = run_benchmark(config)
        assert {f["n_docs"] for f in summary["failures"]} == {10}
        assert {row["n_docs"] for row in summary["rows"]} == {40}
