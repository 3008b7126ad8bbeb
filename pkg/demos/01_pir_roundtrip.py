"""One private fetch, from raw parts.

The server holds a byte matrix; the client wants one column without the
server learning which.  The client encrypts a one-hot selector under LWE,
the server multiplies it into the matrix, and the client strips the key
term with a precomputed hint and rounds the noise away.
"""

import secrets

import numpy as np

from prag import answer, compute_hint, decode_values, derive_params, encrypt_vector, keygen

rng = np.random.default_rng(0)
n_rows, n_cols = 48, 96
database = rng.integers(0, 256, size=(n_rows, n_cols), dtype=np.uint8)
wanted = 37

print(f"database: {n_rows} x {n_cols} bytes; client wants column {wanted}")

params = derive_params(n_cols, plain_mod=256, profile="fetch", a_seed=secrets.token_bytes(32))
print(
    f"params: {params.cipher_mod_bits}-bit ciphertexts, plain modulus {params.plain_mod}, "
    f"scale delta=2^{params.delta.bit_length() - 1}, lwe dimension {params.lwe_dim}"
)

a_matrix = params.expand_a()
hint = compute_hint(database, a_matrix)
print(f"hint (shipped once, query-independent): {hint.values.shape} ring words")

sk = keygen(params, secrets.token_bytes(32))
selector = np.zeros(n_cols, dtype=np.int64)
selector[wanted] = 1
query = encrypt_vector(params, sk, a_matrix, selector, secrets.token_bytes(32))
print(f"query: {query.entries.shape[0]} ciphertext words -- looks uniform to the server")

ans = answer(database, query)
decoded = decode_values(ans, hint, sk, params)

assert np.array_equal(decoded, database[:, wanted].astype(np.int64)), "decode mismatch!"
print(f"decoded column equals database[:, {wanted}] exactly: True")
print(f"first bytes: {decoded[:8].tolist()} == {database[:8, wanted].tolist()}")
