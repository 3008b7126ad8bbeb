"""Server state, transports, and the retrieval client.

The server is oblivious: it answers encrypted fetches against fixed
matrices and encrypted scoring products against named clusters, and the
work it does is independent of which column a query selects. The client
owns all keys, routes queries against the centroids it received at setup,
and decodes answers locally. Both transports fully serialize every frame,
so byte counters are wire-exact even in process.
"""

import hashlib
import json
import os
import socket
import socketserver
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    DecodeSizeMismatch,
    DimensionMismatch,
    InvalidEntryPoint,
    NonFiniteInput,
    ProtocolError,
    TransportError,
    UnknownCluster,
)
from .framing import unpack_cluster
from .graph import private_fetch_docs, private_search
from .index import BuiltIndex, load_index
from .lwe import PirAnswer, PirQuery, answer, decode_with_mask, encrypt_against, keygen
from .scoring import private_score, quantize_embedding, select_topk_ids
from .wire import (
    ERR_DIMENSION,
    ERR_MALFORMED,
    ERR_UNKNOWN_TARGET,
    ERR_UNKNOWN_TYPE,
    MSG_ERROR,
    MSG_PIR_ANSWER,
    MSG_PIR_QUERY,
    MSG_SCORE_ANSWER,
    MSG_SCORE_QUERY,
    MSG_SETUP_REQ,
    MSG_SETUP_RESP,
    SERVER_MAX_FRAME,
    TARGET_NAMES,
    pack_error,
    pack_frame,
    pack_pir_query,
    pack_score_query,
    pack_setup_blob,
    read_frame,
    split_frame,
    unpack_error,
    unpack_pir_query,
    unpack_score_query,
    unpack_setup_blob,
    write_frame,
)

SYSTEM_PIR_RAG = "pir-rag"
SYSTEM_GRAPH = "graph"
SYSTEM_SCORING = "scoring"
SYSTEM_ALIASES = {"tiptoe": SYSTEM_SCORING}
SYSTEMS = (SYSTEM_PIR_RAG, SYSTEM_GRAPH, SYSTEM_SCORING)


def canonical_system(name: str) -> str:
    resolved = SYSTEM_ALIASES.get(name, name)
    if resolved not in SYSTEMS:
        raise ValueError(f"unknown retrieval system {name!r}; pick from {SYSTEMS}")
    return resolved


# ---------------------------------------------------------------------------
# server


class ServerState:
    """One loaded index plus the message handler; shared across connections.

    handle_message never raises: protocol trouble comes back as an error
    frame and the connection stays usable.
    """

    def __init__(self, index: BuiltIndex):
        self.index = index
        self._blob: bytes | None = None
        self._matrices = {
            "cluster": index.chunk.entries,
            "doc": index.doc.entries,
            "node": index.node.entries,
        }

    @classmethod
    def from_file(cls, path) -> "ServerState":
        return cls(load_index(path))

    def setup_blob(self) -> bytes:
        if self._blob is None:
            self._blob = pack_setup_blob(self.index)
        return self._blob

    def handle_message(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        try:
            if msg_type == MSG_SETUP_REQ:
                return MSG_SETUP_RESP, self.setup_blob()
            if msg_type == MSG_PIR_QUERY:
                return self._handle_pir(payload)
            if msg_type == MSG_SCORE_QUERY:
                return self._handle_score(payload)
            return MSG_ERROR, pack_error(
                ERR_UNKNOWN_TYPE, f"unexpected message type {msg_type:#04x}"
            )
        except UnknownCluster as exc:
            return MSG_ERROR, pack_error(ERR_UNKNOWN_TARGET, str(exc))
        except DimensionMismatch as exc:
            return MSG_ERROR, pack_error(ERR_DIMENSION, str(exc))
        except Exception as exc:  # noqa: BLE001 - the server must keep serving
            return MSG_ERROR, pack_error(ERR_MALFORMED, str(exc))

    def _handle_pir(self, payload: bytes) -> tuple[int, bytes]:
        target, raw = unpack_pir_query(payload)
        name = TARGET_NAMES.get(target)
        if name is None:
            return MSG_ERROR, pack_error(
                ERR_UNKNOWN_TARGET, f"no retrieval target {target}"
            )
        params = self.index.params[name]
        width = params.cipher_mod_bits // 8
        if len(raw) != params.n_cols * width:
            raise DimensionMismatch(
                f"{name} query must be {params.n_cols} x {width} bytes, got {len(raw)}"
            )
        entries = np.frombuffer(raw, dtype=f"<u{width}")
        ans = answer(self._matrices[name], PirQuery(entries=entries, profile=params.profile))
        return MSG_PIR_ANSWER, np.ascontiguousarray(
            ans.entries, dtype=f"<u{width}"
        ).tobytes()

    def _handle_score(self, payload: bytes) -> tuple[int, bytes]:
        cluster_id, raw = unpack_score_query(payload)
        if cluster_id >= self.index.k:
            raise UnknownCluster(
                f"cluster {cluster_id} not in [0, {self.index.k})"
            )
        params = self.index.params["score"]
        if len(raw) != params.n_cols * 8:
            raise DimensionMismatch(
                f"scoring query must be {params.n_cols} x 8 bytes, got {len(raw)}"
            )
        entries = np.frombuffer(raw, dtype="<u8")
        ans = answer(
            self.index.score.matrices[cluster_id],
            PirQuery(entries=entries, profile=params.profile),
        )
        return MSG_SCORE_ANSWER, np.ascontiguousarray(
            ans.entries, dtype="<u8"
        ).tobytes()


class _ConnectionHandler(socketserver.StreamRequestHandler):
    def handle(self):
        state: ServerState = self.server.state
        while True:
            try:
                frame = read_frame(self.rfile, max_frame=SERVER_MAX_FRAME)
            except (TransportError, ProtocolError, OSError):
                break  # cannot trust the stream framing any more
            if frame is None:
                break
            rtype, rpayload = state.handle_message(*frame)
            try:
                write_frame(self.wfile, rtype, rpayload)
                self.wfile.flush()
            except OSError:
                break


class PirServer(socketserver.ThreadingTCPServer):
    """Threaded TCP front for one ServerState."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, index: BuiltIndex, address: tuple[str, int]):
        super().__init__(address, _ConnectionHandler)
        self.state = ServerState(index)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]


def serve(index: BuiltIndex, host: str, port: int) -> None:
    """Blocking server loop."""
    with PirServer(index, (host, port)) as server:
        server.serve_forever()


# ---------------------------------------------------------------------------
# transports


class LocalTransport:
    """In-process request path that still pays full serialization costs."""

    def __init__(self, state: ServerState):
        self.state = state
        self.uplink_bytes = 0
        self.downlink_bytes = 0

    def request(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        frame = pack_frame(msg_type, payload)
        self.uplink_bytes += len(frame)
        rtype, rpayload = self.state.handle_message(*split_frame(frame))
        rframe = pack_frame(rtype, rpayload)
        self.downlink_bytes += len(rframe)
        return split_frame(rframe)

    def close(self) -> None:
        pass


class SocketTransport:
    """One persistent client connection over TCP."""

    def __init__(self, host: str, port: int, timeout: float = 60.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._rfile = self._sock.makefile("rb")
        self._wfile = self._sock.makefile("wb")
        self.uplink_bytes = 0
        self.downlink_bytes = 0

    def request(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        try:
            self.uplink_bytes += write_frame(self._wfile, msg_type, payload)
            self._wfile.flush()
            frame = read_frame(self._rfile)
        except OSError as exc:
            raise TransportError(f"socket failure: {exc}") from exc
        if frame is None:
            raise TransportError("server closed the connection")
        self.downlink_bytes += 5 + len(frame[1])
        return frame

    def close(self) -> None:
        for closer in (self._rfile.close, self._wfile.close, self._sock.close):
            try:
                closer()
            except OSError:
                pass


# ---------------------------------------------------------------------------
# client


@dataclass
class RankedResult:
    doc_id: int
    score: float
    text: str | None = None


@dataclass
class QueryTrace:
    """Flat per-query accounting record; json-ready."""

    system: str
    n_docs: int
    k_clusters: int
    topk: int
    uplink_bytes: int = 0
    downlink_bytes: int = 0
    setup_bytes: int = 0
    pir_op_count: int = 0
    route_ms: float = 0.0
    encrypt_ms: float = 0.0
    server_ms: float = 0.0
    decode_ms: float = 0.0
    rerank_ms: float = 0.0
    total_ms: float = 0.0
    result_doc_ids: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class _Tally:
    __slots__ = ("encrypt_ms", "server_ms", "decode_ms", "ops")

    def __init__(self):
        self.encrypt_ms = 0.0
        self.server_ms = 0.0
        self.decode_ms = 0.0
        self.ops = 0


def _ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


class PirClient:
    """Holds the keys, routes queries, and decodes private answers.

    One instance per logical user; each encrypted surface (cluster, doc,
    node, score) gets its own key and cached key products so per-query
    work is a vector add on encrypt and a subtract-and-round on decode.
    """

    def __init__(self, transport, key_seed: bytes | None = None):
        self.transport = transport
        self._base_seed = key_seed if key_seed is not None else os.urandom(32)
        if len(self._base_seed) != 32:
            raise ValueError("key seed must be 32 bytes")
        self._ctr = 0

        t0 = time.perf_counter()
        up0 = transport.uplink_bytes
        down0 = transport.downlink_bytes
        rtype, blob = transport.request(MSG_SETUP_REQ, b"")
        self._expect(rtype, blob, MSG_SETUP_RESP)
        self.setup = unpack_setup_blob(blob)

        self._keys = {}
        self._masks = {}
        self._hint_s = {}
        for name in ("cluster", "doc", "node", "score"):
            params = self.setup.params[name]
            sk = keygen(params, self._derive_seed(b"key", name.encode()))
            a = params.expand_a()
            self._keys[name] = sk
            self._masks[name] = a @ sk.values
        for name in ("cluster", "doc", "node"):
            self._hint_s[name] = self.setup.hints[name].values @ self._keys[name].values
        score_key = self._keys["score"].values
        self._score_hint_s = [h.values @ score_key for h in self.setup.score_hints]
        self._doc_col = {
            int(doc_id): col for col, doc_id in enumerate(self.setup.doc_ids.tolist())
        }
        self.setup_bytes = (transport.uplink_bytes - up0) + (
            transport.downlink_bytes - down0
        )
        self.setup_ms = _ms(t0)
        self._tally = _Tally()

    # -- key and seed management ------------------------------------------

    def _derive_seed(self, *labels: bytes) -> bytes:
        digest = hashlib.sha256()
        digest.update(b"prag/client-seed")
        for label in labels:
            digest.update(b"/")
            digest.update(label)
        digest.update(self._base_seed)
        return digest.digest()

    def fresh_seed(self) -> bytes:
        self._ctr += 1
        return self._derive_seed(b"query", self._ctr.to_bytes(8, "little"))

    @staticmethod
    def _expect(rtype: int, payload: bytes, want: int) -> None:
        if rtype == MSG_ERROR:
            code, message = unpack_error(payload)
            raise ProtocolError(f"server error {code}: {message}")
        if rtype != want:
            raise ProtocolError(f"expected message {want:#04x}, got {rtype:#04x}")

    # -- metadata the retrieval flows duck-type against -------------------

    @property
    def k(self) -> int:
        return self.setup.k

    @property
    def d(self) -> int:
        return self.setup.d

    @property
    def n_docs(self) -> int:
        return self.setup.n_docs

    @property
    def n_nodes(self) -> int:
        return self.setup.n_docs

    @property
    def entry_col(self) -> int:
        return self.setup.entry_col

    @property
    def graph_degree(self) -> int:
        return self.setup.degree

    @property
    def score_params(self):
        return self.setup.params["score"]

    @property
    def score_maxabs(self) -> float:
        return self.setup.maxabs

    @property
    def score_mask(self) -> np.ndarray:
        return self._masks["score"]

    @property
    def score_row_ids(self) -> np.ndarray:
        return self.setup.row_ids

    def doc_column(self, doc_id: int) -> int | None:
        return self._doc_col.get(int(doc_id))

    # -- encrypted operations ---------------------------------------------

    def _fetch_column(self, name: str, target: int, col: int) -> bytes:
        params = self.setup.params[name]
        u = np.zeros(params.n_cols, dtype=np.int64)
        u[col] = 1

        t0 = time.perf_counter()
        query = encrypt_against(params, self._masks[name], u, self.fresh_seed())
        self._tally.encrypt_ms += _ms(t0)

        t0 = time.perf_counter()
        rtype, rpayload = self.transport.request(
            MSG_PIR_QUERY, pack_pir_query(target, query.entries)
        )
        self._tally.server_ms += _ms(t0)
        self._expect(rtype, rpayload, MSG_PIR_ANSWER)

        t0 = time.perf_counter()
        width = params.cipher_mod_bits // 8
        mask = self._hint_s[name]
        if len(rpayload) != mask.shape[0] * width:
            raise DecodeSizeMismatch(
                f"{name} answer is {len(rpayload)} bytes, expected {mask.shape[0] * width}"
            )
        entries = np.frombuffer(rpayload, dtype=f"<u{width}")
        values = decode_with_mask(entries, mask, params)
        stream = values.astype(np.uint8).tobytes()
        self._tally.decode_ms += _ms(t0)
        self._tally.ops += 1
        return stream

    def fetch_cluster(self, cluster_id: int) -> bytes:
        if not 0 <= cluster_id < self.k:
            raise UnknownCluster(f"cluster {cluster_id} not in [0, {self.k})")
        return self._fetch_column("cluster", 0, cluster_id)

    def fetch_doc(self, col: int) -> bytes:
        return self._fetch_column("doc", 1, col)

    def fetch_node(self, col: int) -> bytes:
        return self._fetch_column("node", 2, col)

    def exchange_score(self, cluster_id: int, query: PirQuery) -> PirAnswer:
        t0 = time.perf_counter()
        rtype, rpayload = self.transport.request(
            MSG_SCORE_QUERY, pack_score_query(cluster_id, query.entries)
        )
        self._tally.server_ms += _ms(t0)
        self._expect(rtype, rpayload, MSG_SCORE_ANSWER)
        self._tally.ops += 1
        return PirAnswer(entries=np.frombuffer(rpayload, dtype="<u8"))

    def decode_score(self, cluster_id: int, raw: PirAnswer) -> np.ndarray:
        t0 = time.perf_counter()
        mask = self._score_hint_s[cluster_id]
        if raw.entries.shape[0] != mask.shape[0]:
            raise DecodeSizeMismatch(
                f"score answer has {raw.entries.shape[0]} rows, expected {mask.shape[0]}"
            )
        values = decode_with_mask(raw.entries, mask, self.score_params)
        self._tally.decode_ms += _ms(t0)
        return values

    # -- routing and ranking ----------------------------------------------

    def route_query(self, embedding: np.ndarray) -> int:
        q = np.asarray(embedding, dtype=np.float64)
        if not np.isfinite(q).all():
            raise NonFiniteInput("query embedding has non-finite components")
        if q.shape != (self.d,):
            raise DimensionMismatch(f"query dim {q.shape} != corpus dim {self.d}")
        norm = np.linalg.norm(q)
        unit = q / (norm if norm else 1.0)
        sims = self.setup.centroids.astype(np.float64) @ unit
        return int(np.argmax(sims))

    @staticmethod
    def rerank_topk(embedding, docs, topk: int) -> list[RankedResult]:
        q = np.asarray(embedding, dtype=np.float64)
        qnorm = np.linalg.norm(q)
        unit = q / (qnorm if qnorm else 1.0)
        scored = []
        for doc in docs:
            v = doc.embedding.astype(np.float64)
            norm = np.linalg.norm(v)
            score = float(unit @ v / norm) if norm else 0.0
            scored.append((doc, score))
        scored.sort(key=lambda t: (-t[1], t[0].doc_id))
        return [
            RankedResult(doc_id=doc.doc_id, score=score, text=doc.text)
            for doc, score in scored[:topk]
        ]

    # -- full query flows --------------------------------------------------

    def _pad_ids(self, ids: list[int], topk: int) -> list[int]:
        """Pad the content-fetch list to exactly topk ids.

        The content stage must always issue the same number of fetches, or
        the op count (and the server-visible access pattern) would reveal how
        many hits the retrieval stage produced.
        """
        if len(ids) >= topk:
            return ids
        filler = ids[0] if ids else int(self.setup.doc_ids[0])
        return ids + [filler] * (topk - len(ids))

    def routed_entry(self, embedding: np.ndarray) -> int:
        """Walk entry column: first member of the cluster the query routes to.

        Routing is client-local (centroids ship in setup), so this costs no
        PIR traffic; it starts the walk near the query instead of at the
        corpus-wide medoid.  Falls back to the published medoid if the routed
        cluster is somehow empty.
        """
        cluster_id = self.route_query(embedding)
        for doc_id in self.setup.row_ids[cluster_id]:
            if doc_id >= 0:
                col = self.doc_column(int(doc_id))
                if col is not None:
                    return col
        return self.entry_col

    def query(
        self,
        embedding: np.ndarray,
        system: str = SYSTEM_PIR_RAG,
        topk: int = 10,
        max_hops: int = 4,
        beam: int = 8,
        fetch_content: bool = True,
        entry_id: int | None = None,
    ) -> tuple[list[RankedResult], QueryTrace]:
        """Run one retrieval under the chosen system, fully accounted.

        ``entry_id`` (graph system only) forces the walk to start at a given
        document; by default the walk enters at the routed cluster.
        """
        system = canonical_system(system)
        trace = QueryTrace(
            system=system,
            n_docs=self.n_docs,
            k_clusters=self.k,
            topk=topk,
            setup_bytes=self.setup_bytes,
        )
        self._tally = _Tally()
        up0 = self.transport.uplink_bytes
        down0 = self.transport.downlink_bytes
        t_total = time.perf_counter()

        if system == SYSTEM_PIR_RAG:
            t0 = time.perf_counter()
            cluster_id = self.route_query(embedding)
            trace.route_ms = _ms(t0)
            stream = self.fetch_cluster(cluster_id)
            t0 = time.perf_counter()
            docs = unpack_cluster(stream, self.d)
            results = self.rerank_topk(embedding, docs, topk)
            trace.rerank_ms = _ms(t0)
        elif system == SYSTEM_GRAPH:
            t0 = time.perf_counter()
            if entry_id is not None:
                entry = self.doc_column(entry_id)
                if entry is None:
                    raise InvalidEntryPoint(
                        f"entry doc id {entry_id} is not in the served corpus"
                    )
            else:
                entry = self.routed_entry(embedding)
            trace.route_ms = _ms(t0)
            ranked, _state = private_search(
                self,
                embedding,
                entry_col=entry,
                max_hops=max_hops,
                beam=beam,
                topk=topk,
            )
            results = [RankedResult(doc_id=i, score=s) for i, s in ranked]
            if fetch_content:
                docs = private_fetch_docs(
                    self, self._pad_ids([r.doc_id for r in results], topk)
                )
                for res, doc in zip(results, docs):
                    res.text = doc.text
        else:
            t0 = time.perf_counter()
            cluster_id = self.route_query(embedding)
            trace.route_ms = _ms(t0)
            scored = private_score(self, embedding, cluster_id)
            t0 = time.perf_counter()
            by_id = dict(scored)
            ids = select_topk_ids(scored, topk)
            results = [RankedResult(doc_id=i, score=float(by_id[i])) for i in ids]
            trace.rerank_ms = _ms(t0)
            if fetch_content:
                docs = private_fetch_docs(self, self._pad_ids(ids, topk))
                for res, doc in zip(results, docs):
                    res.text = doc.text

        trace.total_ms = _ms(t_total)
        trace.encrypt_ms = self._tally.encrypt_ms
        trace.server_ms = self._tally.server_ms
        trace.decode_ms = self._tally.decode_ms
        trace.pir_op_count = self._tally.ops
        trace.uplink_bytes = self.transport.uplink_bytes - up0
        trace.downlink_bytes = self.transport.downlink_bytes - down0
        trace.result_doc_ids = [r.doc_id for r in results]
        return results, trace

    def close(self) -> None:
        self.transport.close()
