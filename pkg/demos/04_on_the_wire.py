"""What actually crosses the network.

Serve an index on a real TCP socket, then watch the frames: a hello, the
setup blob, an encrypted query, an answer -- and one deliberately garbage
frame to show the server shrugging it off instead of falling over.
"""

import socket
import struct
import threading

import numpy as np

from prag import (
    PirClient,
    PirServer,
    SocketTransport,
    build_index,
    gen_synthetic_corpus,
    pack_frame,
)
from prag.wire import MSG_ERROR

records = gen_synthetic_corpus(200, d=16, n_blobs=5, rng_seed=2)
index = build_index(records, k=5, chunk_size=64, rng_seed=0, degree=6)

server = PirServer(index, ("127.0.0.1", 0))
host, port = server.server_address
threading.Thread(target=server.serve_forever, daemon=True).start()
print(f"server listening on {host}:{port}")

client = PirClient(SocketTransport(host, port), key_seed=bytes(range(32)))
print(f"handshake done: setup blob {client.setup_bytes:,} bytes "
      f"(params, centroids, hints -- downloaded once, reused for every query)")

query = records[3].embedding + 0.05 * np.random.default_rng(0).normal(size=16)
results, trace = client.query(query, system="pir-rag", topk=3)
print(f"query over the socket: {trace.uplink_bytes} B up, {trace.downlink_bytes} B down")
print(f"   top hit: doc {results[0].doc_id}: {results[0].text!r}")

print("\nnow a hostile client sends 10 bytes of garbage:")
raw = socket.create_connection((host, port))
raw.sendall(pack_frame(0xEE, b"\xde\xad\xbe\xef\x00"))
length, = struct.unpack("<I", raw.recv(4))
body = raw.recv(length)
print(f"   server replies with frame type {body[0]:#x} "
      f"({'ERROR' if body[0] == MSG_ERROR else 'unexpected'}), then keeps serving:")
raw.close()

again, _ = client.query(query, system="pir-rag", topk=1)
print(f"   same client, next query still fine: doc {again[0].doc_id}")

client.close()
server.shutdown()
server.server_close()
print("server stopped.")
