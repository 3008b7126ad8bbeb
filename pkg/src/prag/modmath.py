"""Exact linear algebra on power-of-two residue rings.

numpy unsigned arrays wrap natively, so mod 2^32 / 2^64 arithmetic is free,
but integer matmul bypasses BLAS and is slow for large operands. When the
left operand has small magnitude (packed bytes, quantized embeddings), its
products against 16-bit limbs of the right operand fit float64 exactly, so
the work can run through BLAS and be recombined with wrapping shifts. The
plain integer path remains as a fallback when the exactness guard fails.
"""

import numpy as np

# float64 mantissa budget; limb products must stay strictly below this
_EXACT_LIMIT = 2**53


def ring_dtype(bits: int) -> np.dtype:
    if bits == 32:
        return np.dtype(np.uint32)
    if bits == 64:
        return np.dtype(np.uint64)
    raise ValueError(f"unsupported ring width: {bits}")


def to_ring(values: np.ndarray, bits: int) -> np.ndarray:
    """Lift an integer array into the ring, negatives via two's complement."""
    dtype = ring_dtype(bits)
    arr = np.asarray(values)
    if arr.dtype == dtype:
        return arr
    if np.issubdtype(arr.dtype, np.signedinteger):
        return arr.astype(np.int64).astype(dtype)
    return arr.astype(dtype)


def centered(values: np.ndarray, modulus: int) -> np.ndarray:
    """Map residues in [0, modulus) to signed representatives in (-m/2, m/2]."""
    arr = np.asarray(values).astype(np.int64) % modulus
    half = modulus // 2
    return np.where(arr > half, arr - modulus, arr)


def matmul_mod(plain: np.ndarray, ring: np.ndarray, bits: int) -> np.ndarray:
    """Compute plain @ ring mod 2^bits exactly.

    `plain` is a small-magnitude integer matrix (signed allowed); `ring`
    holds full-width residues, one or two dimensional. Result dtype matches
    the ring width.
    """
    dtype = ring_dtype(bits)
    plain = np.asarray(plain)
    ring = np.asarray(ring, dtype=dtype)
    if plain.ndim != 2 or plain.shape[1] != ring.shape[0]:
        raise ValueError(
            f"shape mismatch: {plain.shape} @ {ring.shape}"
        )
    inner = plain.shape[1]
    max_abs = int(np.max(np.abs(plain.astype(np.int64)))) if plain.size else 0
    if max_abs * 0xFFFF * max(inner, 1) < _EXACT_LIMIT:
        return _limb_matmul(plain, ring, bits, dtype)
    # exactness guard failed: plain integer matmul, correct at any magnitude
    return to_ring(plain, bits) @ ring


def _limb_matmul(plain, ring, bits, dtype) -> np.ndarray:
    pf = plain.astype(np.float64)
    out_shape = (plain.shape[0],) if ring.ndim == 1 else (plain.shape[0], ring.shape[1])
    acc = np.zeros(out_shape, dtype=dtype)
    for limb in range(bits // 16):
        shift = dtype.type(16 * limb)
        chunk = ((ring >> shift) & dtype.type(0xFFFF)).astype(np.float64)
        part = (pf @ chunk).astype(np.int64).astype(dtype)
        acc += part << shift
    return acc
