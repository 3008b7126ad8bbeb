"""Command-line front: embed a raw corpus, or validate an embedded one."""

from __future__ import annotations

import argparse
import sys

from .errors import EmbedToolError
from .models import DEFAULT_MODEL
from .pipeline import embed_corpus, validate_schema


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed",
        description=(
            "Convert raw {'id', 'text'} JSONL into the embedded corpus format "
            "(manifest line + unit-norm embedding records), or validate such a file."
        ),
    )
    parser.add_argument("--in", dest="inp", metavar="RAW", help="raw JSONL input")
    parser.add_argument("--out", metavar="CORPUS", help="embedded JSONL output")
    parser.add_argument(
        "--model",
        default=DEFAULT_MODEL,
        help=f"embedding model name (default {DEFAULT_MODEL}); "
        "hashing:<dim> selects the offline featurizer",
    )
    parser.add_argument("--batch", type=int, default=32, help="encoding batch size")
    parser.add_argument(
        "--validate",
        metavar="CORPUS",
        help="check an embedded corpus file instead of embedding",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.validate is not None:
        if args.inp or args.out:
            parser.error("--validate cannot be combined with --in/--out")
        try:
            report = validate_schema(args.validate)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if report.ok:
            print(f"OK: {report.count} records, dim {report.dim}")
            return 0
        for violation in report.violations:
            print(violation, file=sys.stderr)
        return 1

    if not args.inp or not args.out:
        parser.error("--in and --out are required (or use --validate)")
    if args.batch < 1:
        parser.error("--batch must be at least 1")
    try:
        dim, count = embed_corpus(args.inp, args.model, args.out, batch_size=args.batch)
    except (EmbedToolError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"embedded {count} documents (dim {dim}) -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
