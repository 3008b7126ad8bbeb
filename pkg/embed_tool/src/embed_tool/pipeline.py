"""Raw-text parsing, the embedding pass, and output validation.

Input is JSONL of ``{"id": int, "text": str}`` documents.  Output is the
ingestion format the retrieval stack loads: a manifest line
``{"dim": d, "count": n}`` followed by one ``{"id", "text", "embedding"}``
record per document, embeddings L2-normalized, input order preserved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError
from .models import load_model


@dataclass(frozen=True)
class RawDoc:
    """One input document: a stable integer id and its pre-chunked text."""

    doc_id: int
    text: str


def load_raw_docs(path) -> list[RawDoc]:
    """Parse a raw JSONL corpus, enforcing unique ids and non-empty text."""
    docs: list[RawDoc] = []
    seen: set[int] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid json: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"line {lineno}: expected an object")
            try:
                doc_id = obj["id"]
                text = obj["text"]
            except KeyError as exc:
                raise ParseError(f"line {lineno}: missing field {exc}") from exc
            if isinstance(doc_id, bool) or not isinstance(doc_id, int):
                raise ParseError(f"line {lineno}: id must be an integer")
            if doc_id in seen:
                raise ParseError(f"line {lineno}: id {doc_id} repeated")
            if not isinstance(text, str) or not text:
                raise ParseError(f"line {lineno}: text must be a non-empty string")
            seen.add(doc_id)
            docs.append(RawDoc(doc_id=doc_id, text=text))
    return docs


def embed_corpus(input_path, model_name: str, out_path, batch_size: int = 32) -> tuple[int, int]:
    """Embed a raw corpus into the ingestion JSONL format.

    Returns (dim, count).  The output always starts with the manifest line,
    even for an empty input, and every embedding is unit-norm.
    """
    docs = load_raw_docs(input_path)
    model = load_model(model_name)

    vectors = np.zeros((len(docs), model.dim), dtype=np.float64)
    step = max(1, int(batch_size))
    for start in range(0, len(docs), step):
        chunk = docs[start : start + step]
        vectors[start : start + len(chunk)] = model.encode(
            [d.text for d in chunk], batch_size=step
        )

    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if len(docs) and not norms.all():
        raise ParseError("model produced a zero vector; cannot normalize")
    unit = (vectors / norms if len(docs) else vectors).astype(np.float32)

    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"dim": model.dim, "count": len(docs)}) + "\n")
        for doc, vec in zip(docs, unit):
            fh.write(
                json.dumps(
                    {"id": doc.doc_id, "text": doc.text, "embedding": vec.tolist()}
                )
                + "\n"
            )
    return model.dim, len(docs)


@dataclass
class ValidationReport:
    """Outcome of a schema check: overall flag plus per-line violations."""

    ok: bool = True
    violations: list[str] = field(default_factory=list)
    dim: int | None = None
    count: int = 0

    def add(self, message: str) -> None:
        self.ok = False
        self.violations.append(message)


def validate_schema(path) -> ValidationReport:
    """Check an embedded corpus file: manifest consistency, uniform dims,
    id uniqueness, and finite floats.  Collects every violation it finds."""
    report = ValidationReport()
    seen: set[int] = set()
    records = 0
    manifest_count: int | None = None
    saw_any_line = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            saw_any_line = True
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                report.add(f"line {lineno}: invalid json: {exc}")
                continue
            if not isinstance(obj, dict):
                report.add(f"line {lineno}: expected an object")
                continue
            if lineno == 1:
                if "id" in obj or "dim" not in obj or "count" not in obj:
                    report.add('line 1: expected manifest {"dim": ..., "count": ...}')
                    continue
                dim, count = obj["dim"], obj["count"]
                if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
                    report.add(f"line 1: manifest dim must be a positive integer, got {dim!r}")
                else:
                    report.dim = dim
                if not isinstance(count, int) or isinstance(count, bool) or count < 0:
                    report.add(f"line 1: manifest count must be a non-negative integer, got {count!r}")
                else:
                    manifest_count = count
                continue
            records += 1
            doc_id = obj.get("id")
            if isinstance(doc_id, bool) or not isinstance(doc_id, int):
                report.add(f"line {lineno}: id must be an integer, got {doc_id!r}")
            elif doc_id in seen:
                report.add(f"line {lineno}: duplicated id {doc_id}")
            else:
                seen.add(doc_id)
            if not isinstance(obj.get("text"), str):
                report.add(f"line {lineno}: text must be a string")
            emb = obj.get("embedding")
            if not isinstance(emb, list) or not emb:
                report.add(f"line {lineno}: embedding must be a non-empty array")
                continue
            try:
                vec = np.asarray(emb, dtype=np.float64)
            except (TypeError, ValueError):
                report.add(f"line {lineno}: embedding is not numeric")
                continue
            if vec.ndim != 1:
                report.add(f"line {lineno}: embedding must be flat")
                continue
            if not np.isfinite(vec).all():
                report.add(f"line {lineno}: embedding has non-finite entries")
            if report.dim is not None and vec.shape[0] != report.dim:
                report.add(
                    f"line {lineno}: embedding dim {vec.shape[0]} != manifest dim {report.dim}"
                )
    report.count = records
    if not saw_any_line:
        report.add("line 1: expected manifest, file is empty")
    elif manifest_count is not None and manifest_count != records:
        report.add(f"manifest count {manifest_count} != {records} records present")
    return report
