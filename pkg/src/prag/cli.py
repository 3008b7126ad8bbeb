"""Command-line front: build-index / serve / query / bench."""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys

import numpy as np

from .errors import PragError
from .evalkit import BenchConfig, run_benchmark
from .index import build_index, load_corpus, load_index, save_index
from .service import PirClient, SocketTransport, serve


def _parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _load_embedding(value: str) -> np.ndarray:
    """A query vector, given inline ("0.1,0.2,...") or as a .npy/.json file."""
    if os.path.exists(value):
        if value.endswith(".npy"):
            vec = np.load(value)
        else:
            with open(value, "r", encoding="utf-8") as fh:
                vec = np.asarray(json.load(fh), dtype=np.float64)
    else:
        try:
            vec = np.asarray(
                [float(part) for part in value.replace(",", " ").split()]
            )
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"--embedding {value!r} is neither a file nor a list of numbers"
            ) from None
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    if vec.size == 0:
        raise argparse.ArgumentTypeError("--embedding resolved to an empty vector")
    return vec


def _cmd_build_index(args) -> int:
    records = load_corpus(args.corpus)
    index = build_index(
        records,
        k=args.clusters,
        chunk_size=args.chunk_size,
        rng_seed=args.seed,
    )
    save_index(index, args.out)
    size = os.path.getsize(args.out)
    print(
        f"indexed {len(records)} docs into {index.model.centroids.shape[0]} "
        f"clusters -> {args.out} ({size / 1e6:.1f} MB)"
    )
    return 0


def _cmd_serve(args) -> int:
    host, port = args.listen
    index = load_index(args.index)
    print(f"serving {args.index} on {host}:{port}", flush=True)
    serve(index, host, port)
    return 0


def _cmd_query(args) -> int:
    host, port = args.server
    embedding = _load_embedding(args.embedding)
    client = PirClient(SocketTransport(host, port), key_seed=secrets.token_bytes(32))
    try:
        results, trace = client.query(
            embedding,
            system=args.system,
            topk=args.topk,
            max_hops=args.hops,
            beam=args.beam,
            fetch_content=args.fetch_content,
        )
    finally:
        client.close()
    for rank, res in enumerate(results, start=1):
        line = f"{rank:3d}. doc {res.doc_id}  score {res.score:+.4f}"
        if res.text is not None:
            line += f"  {res.text}"
        print(line)
    print(
        f"[{trace.system}] {trace.pir_op_count} PIR ops, "
        f"{trace.uplink_bytes} B up / {trace.downlink_bytes} B down, "
        f"{trace.total_ms:.1f} ms"
    )
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(trace.to_json() + "\n")
        print(f"trace written to {args.trace}")
    return 0


def _cmd_bench(args) -> int:
    config = BenchConfig.from_file(args.config) if args.config else BenchConfig()
    out = args.out
    json_path = os.path.splitext(out)[0] + ".json"
    summary = run_benchmark(
        config,
        csv_path=out,
        json_path=json_path,
        log=lambda msg: print(msg, flush=True),
    )
    print(f"wrote {out} and {json_path}")
    return 1 if summary["failures"] else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="prag",
        description="Private document retrieval over lattice-based PIR.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="cluster and pack a corpus")
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--out", required=True, help="index file to write")
    p.add_argument("--clusters", type=int, default=None,
                   help="cluster count (default: round(sqrt(N)))")
    p.add_argument("--chunk-size", type=int, default=256,
                   help="rows per PIR chunk")
    p.add_argument("--seed", type=int, default=0, help="clustering seed")
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("serve", help="serve an index over TCP")
    p.add_argument("--index", required=True, help="index file to serve")
    p.add_argument("--listen", type=_parse_address, default=("127.0.0.1", 7500),
                   help="host:port to bind (default 127.0.0.1:7500)")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("query", help="run one private query against a server")
    p.add_argument("--server", type=_parse_address, required=True,
                   help="host:port of a running server")
    p.add_argument("--embedding", required=True,
                   help="query vector: .npy/.json file or inline numbers")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--system", default="pir-rag",
                   help="pir-rag | graph | tiptoe (scoring)")
    p.add_argument("--hops", type=int, default=4, help="graph walk hops")
    p.add_argument("--beam", type=int, default=8, help="graph walk beam width")
    p.add_argument("--fetch-content", action="store_true",
                   help="also fetch document text for the baselines")
    p.add_argument("--trace", default=None, help="write the query trace JSON here")
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("bench", help="run the benchmark sweep")
    p.add_argument("--config", default=None, help="flat json sweep config")
    p.add_argument("--out", default="results.csv", help="CSV output path")
    p.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PragError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
