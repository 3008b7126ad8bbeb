"""Secret-key lattice encryption for private matrix-vector products.

The scheme hides which columns of a public matrix a client combines. A query
encrypts a selector vector u coordinate-wise:

    c_j = <A_j, s> + e_j + delta * u_j    (mod 2^w)

The server multiplies its plaintext matrix D into c and returns the product.
The client downloaded H = D @ A once at setup, so it can strip the key term:

    c' = D c - H s = delta * (D u) + D e    (mod 2^w)

Whenever |row of D . e| stays strictly under delta / 2, rounding c' to the
nearest multiple of delta is exact and the decode returns D u mod p. The
ciphertext modulus is always the machine word (2^32 or 2^64), so all ring
arithmetic rides on numpy's native unsigned wraparound.

Signed plaintext matrices (quantized embeddings) are lifted into the ring by
two's complement, which keeps both the product and the noise term small in
magnitude; derive_params checks the matching margin per profile.
"""

from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from .errors import (
    CorrectnessMarginViolated,
    DimensionMismatch,
    InvalidConfig,
    PlaintextOutOfRange,
)
from .modmath import matmul_mod, ring_dtype, to_ring

LWE_DIM = 1024
ERR_BOUND = 8
SEED_LEN = 32

# scoring-profile plaintexts are quantized to signed bytes and clamped
QUANT_MAG = 127


@dataclass(frozen=True)
class LweParams:
    """Parameter set tied to one hosted matrix.

    n_cols is the width of the matrix the query selects over; delta must
    divide the ciphertext modulus exactly, which holding plain_mod to a
    power of two guarantees.
    """

    n_cols: int
    lwe_dim: int
    cipher_mod_bits: int
    plain_mod: int
    err_bound: int
    profile: str
    a_seed: bytes | None = None

    @property
    def delta(self) -> int:
        return (1 << self.cipher_mod_bits) // self.plain_mod

    @property
    def dtype(self) -> np.dtype:
        return ring_dtype(self.cipher_mod_bits)

    def expand_a(self) -> np.ndarray:
        if self.a_seed is None:
            raise InvalidConfig("params carry no public-matrix seed")
        return expand_matrix(self.a_seed, self.n_cols, self.lwe_dim, self.cipher_mod_bits)


@dataclass(eq=False)
class SecretKey:
    values: np.ndarray  # (lwe_dim,) ring words


@dataclass(eq=False)
class PirQuery:
    entries: np.ndarray  # (n_cols,) ciphertext words
    profile: str


@dataclass(eq=False)
class PirAnswer:
    entries: np.ndarray  # (m_rows,) ciphertext words


@dataclass(eq=False)
class PirHint:
    values: np.ndarray  # (m_rows, lwe_dim) ring words


def derive_params(
    n_cols: int,
    plain_mod: int,
    profile: str,
    a_seed: bytes | None = None,
    cipher_mod_bits: int | None = None,
) -> LweParams:
    """Pick a parameter set and prove the decode margin holds.

    fetch: 32-bit ciphertexts, matrix entries up to plain_mod - 1.
    scoring: 64-bit ciphertexts, matrix entries clamped to |v| <= 127; the
    margin uses that magnitude, and the achievable dot-product range must
    also fit inside (-plain_mod/2, plain_mod/2] for signed decode.

    cipher_mod_bits may widen the default word when a matrix is too wide
    for the 32-bit margin.
    """
    if n_cols < 1:
        raise InvalidConfig(f"n_cols must be positive, got {n_cols}")
    if plain_mod < 2 or plain_mod & (plain_mod - 1):
        raise InvalidConfig(f"plain_mod must be a power of two >= 2, got {plain_mod}")
    if profile not in ("fetch", "scoring"):
        raise InvalidConfig(f"unknown profile {profile!r}")
    if a_seed is not None and len(a_seed) != SEED_LEN:
        raise InvalidConfig(f"seed must be {SEED_LEN} bytes, got {len(a_seed)}")
    bits = cipher_mod_bits if cipher_mod_bits is not None else (32 if profile == "fetch" else 64)
    if bits not in (32, 64):
        raise InvalidConfig(f"cipher_mod_bits must be 32 or 64, got {bits}")
    if plain_mod > 1 << bits:
        raise InvalidConfig("plain_mod exceeds the ciphertext modulus")

    params = LweParams(
        n_cols=n_cols,
        lwe_dim=LWE_DIM,
        cipher_mod_bits=bits,
        plain_mod=plain_mod,
        err_bound=ERR_BOUND,
        profile=profile,
        a_seed=a_seed,
    )
    magnitude = plain_mod - 1 if profile == "fetch" else min(QUANT_MAG, plain_mod - 1)
    worst_noise = n_cols * magnitude * ERR_BOUND
    if worst_noise >= params.delta // 2:
        raise CorrectnessMarginViolated(
            f"worst-case noise {worst_noise} >= delta/2 = {params.delta // 2} "
            f"(n_cols={n_cols}, plain_mod={plain_mod}, profile={profile}); "
            "shrink plain_mod, reduce n_cols, or widen cipher_mod_bits"
        )
    if profile == "scoring":
        score_range = n_cols * QUANT_MAG * QUANT_MAG
        if score_range >= plain_mod // 2:
            raise CorrectnessMarginViolated(
                f"max |dot product| {score_range} >= plain_mod/2 = {plain_mod // 2}; "
                "signed decode would wrap, reduce n_cols or grow plain_mod"
            )
    return params


def _keystream(seed: bytes, label: bytes, nbytes: int) -> bytes:
    """Deterministic ChaCha20 stream; label picks an independent domain."""
    if len(seed) != SEED_LEN:
        raise InvalidConfig(f"seed must be {SEED_LEN} bytes, got {len(seed)}")
    nonce = label.ljust(16, b"\x00")[:16]
    enc = Cipher(algorithms.ChaCha20(seed, nonce), mode=None).encryptor()
    return enc.update(bytes(nbytes))


def expand_matrix(seed: bytes, rows: int, cols: int, bits: int = 32) -> np.ndarray:
    """Expand a seed into a rows x cols matrix of uniform ring words.

    The stream is read row-major, so (seed, r, c) and (seed, c, r) contain
    the same flat word sequence; only the shape differs.
    """
    width = bits // 8
    raw = _keystream(seed, b"expand-a", rows * cols * width)
    flat = np.frombuffer(raw, dtype=f"<u{width}")
    return flat.reshape(rows, cols)


def keygen(params: LweParams, rng_seed: bytes, insecure_zero: bool = False) -> SecretKey:
    """Sample a uniform secret key. insecure_zero exists only so tests can
    observe raw noise terms; never use it for actual queries."""
    if insecure_zero:
        return SecretKey(values=np.zeros(params.lwe_dim, dtype=params.dtype))
    width = params.cipher_mod_bits // 8
    raw = _keystream(rng_seed, b"secret-key", params.lwe_dim * width)
    return SecretKey(values=np.frombuffer(raw, dtype=f"<u{width}").copy())


def sample_errors(params: LweParams, rng_seed: bytes, count: int) -> np.ndarray:
    """Centered binomial noise: popcount(8 bits) - popcount(8 bits)."""
    raw = _keystream(rng_seed, b"lwe-error", 2 * count)
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
    halves = bits.reshape(count, 2, 8).sum(axis=2, dtype=np.int64)
    return halves[:, 0] - halves[:, 1]


def _check_plaintext(params: LweParams, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u)
    if u.ndim != 1 or u.shape[0] != params.n_cols:
        raise DimensionMismatch(
            f"selector length {u.shape} does not match n_cols {params.n_cols}"
        )
    if not np.issubdtype(u.dtype, np.integer):
        raise PlaintextOutOfRange(f"plaintext must be integral, got {u.dtype}")
    as_int = u.astype(np.int64)
    if as_int.min(initial=0) < 0 or as_int.max(initial=0) >= params.plain_mod:
        raise PlaintextOutOfRange(
            f"plaintext values must lie in [0, {params.plain_mod})"
        )
    return as_int


def encrypt_against(
    params: LweParams,
    a_times_s: np.ndarray,
    u: np.ndarray,
    rng_seed: bytes,
    insecure_zero_error: bool = False,
) -> PirQuery:
    """Encrypt with A @ s precomputed; clients cache that product per matrix."""
    as_int = _check_plaintext(params, u)
    if a_times_s.shape != (params.n_cols,):
        raise DimensionMismatch(
            f"mask length {a_times_s.shape} does not match n_cols {params.n_cols}"
        )
    dtype = params.dtype
    if insecure_zero_error:
        e = np.zeros(params.n_cols, dtype=np.int64)
    else:
        e = sample_errors(params, rng_seed, params.n_cols)
    entries = a_times_s + to_ring(e, params.cipher_mod_bits)
    entries += to_ring(as_int, params.cipher_mod_bits) * dtype.type(params.delta)
    return PirQuery(entries=entries, profile=params.profile)


def encrypt_vector(
    params: LweParams,
    sk: SecretKey,
    a_matrix: np.ndarray,
    u: np.ndarray,
    rng_seed: bytes,
    insecure_zero_error: bool = False,
) -> PirQuery:
    """Encrypt a selector vector u in [0, plain_mod)^n_cols."""
    if a_matrix.shape != (params.n_cols, params.lwe_dim):
        raise DimensionMismatch(
            f"public matrix shape {a_matrix.shape} does not match "
            f"({params.n_cols}, {params.lwe_dim})"
        )
    a_times_s = a_matrix @ sk.values
    return encrypt_against(params, a_times_s, u, rng_seed, insecure_zero_error)


def compute_hint(d_matrix: np.ndarray, a_matrix: np.ndarray) -> PirHint:
    """H = D @ A over the ciphertext ring; shipped to clients once."""
    d_matrix = np.asarray(d_matrix)
    if d_matrix.ndim != 2 or d_matrix.shape[1] != a_matrix.shape[0]:
        raise DimensionMismatch(
            f"hint shapes disagree: {d_matrix.shape} @ {a_matrix.shape}"
        )
    bits = a_matrix.dtype.itemsize * 8
    return PirHint(values=matmul_mod(d_matrix, a_matrix, bits))


def answer(d_matrix: np.ndarray, query: PirQuery) -> PirAnswer:
    """Server side: one matrix-vector product over the ciphertext ring.

    Pure function of its inputs, safe to call concurrently. Signed matrices
    are lifted by two's complement, unsigned ones as-is.
    """
    d_matrix = np.asarray(d_matrix)
    entries = np.asarray(query.entries)
    if d_matrix.ndim != 2 or d_matrix.shape[1] != entries.shape[0]:
        raise DimensionMismatch(
            f"matrix {d_matrix.shape} cannot multiply query of length {entries.shape}"
        )
    bits = entries.dtype.itemsize * 8
    return PirAnswer(entries=matmul_mod(d_matrix, entries, bits))


def decode_raw(ans: PirAnswer, hint: PirHint, sk: SecretKey) -> np.ndarray:
    """Strip the key term, leaving delta * (D u) + D e in the ring."""
    if hint.values.shape[0] != ans.entries.shape[0]:
        raise DimensionMismatch(
            f"hint rows {hint.values.shape[0]} != answer length {ans.entries.shape[0]}"
        )
    return ans.entries - hint.values @ sk.values


def _round_plain(raw: np.ndarray, params: LweParams) -> np.ndarray:
    dtype = params.dtype
    shift = params.cipher_mod_bits - (params.plain_mod.bit_length() - 1)
    vals = (raw + dtype.type(params.delta // 2)) >> dtype.type(shift)
    return vals.astype(np.int64)


def decode_values(ans: PirAnswer, hint: PirHint, sk: SecretKey, params: LweParams) -> np.ndarray:
    """Round each entry to the nearest multiple of delta (ties away from
    zero upward) and reduce mod plain_mod. Exact while noise < delta / 2."""
    return _round_plain(decode_raw(ans, hint, sk), params)


def decode_with_mask(entries: np.ndarray, hint_s: np.ndarray, params: LweParams) -> np.ndarray:
    """Decode against a precomputed hint @ key mask.

    Clients cache that product per matrix, making each decode a subtraction
    and a rounding shift.
    """
    if entries.shape != hint_s.shape:
        raise DimensionMismatch(
            f"answer length {entries.shape} != mask length {hint_s.shape}"
        )
    return _round_plain(entries - hint_s, params)
