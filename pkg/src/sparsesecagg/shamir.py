"""Shamir secret sharing over F_q with Lagrange reconstruction at zero.

A 32-byte seed is split into fixed-width limbs (16-bit by default, so every
limb value is below any modulus above 2^16).  Each limb becomes the
constant term of an independent uniformly random polynomial of the
configured degree, evaluated at party indices 1..n.  Any degree+1 shares
reconstruct; at most degree shares reveal nothing, which the test suite
verifies by brute force over a toy field.

Two implementations live here: a scalar path over Python ints that works
for any prime modulus, and a batched path for moduli below 2^32 that
evaluates all sharing polynomials of a cohort with exact float64 matrix
products (operands are split into 16-bit halves so no product ever loses
integer precision).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, List, Sequence

import numpy as np

from .errors import DegreeTooLarge, InconsistentShares, InsufficientShares
from .field import MAX_REJECTIONS, FieldModulus
from .prg import SEED_BYTES, Seed

DEFAULT_LIMB_BITS = 16


@dataclass(frozen=True)
class Share:
    """One party's share of a multi-limb secret.

    holder_index is the Shamir evaluation point (1-based party index);
    chunk_values holds one field element per secret limb.
    """

    holder_index: int
    chunk_values: tuple

    def to_bytes(self) -> bytes:
        """holder_index (4B LE) | limb count (2B LE) | limbs (8B LE each)."""
        out = bytearray()
        out += self.holder_index.to_bytes(4, "little")
        out += len(self.chunk_values).to_bytes(2, "little")
        for v in self.chunk_values:
            out += int(v).to_bytes(8, "little")
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Share":
        holder = int.from_bytes(data[0:4], "little")
        count = int.from_bytes(data[4:6], "little")
        if len(data) != 6 + 8 * count:
            raise ValueError(f"share encoding has wrong length for {count} limbs")
        values = tuple(
            int.from_bytes(data[6 + 8 * k : 14 + 8 * k], "little") for k in range(count)
        )
        return cls(holder, values)


# ---- limb packing ----


def seed_to_limbs(seed: Seed, limb_bits: int = DEFAULT_LIMB_BITS) -> List[int]:
    limb_bytes = limb_bits // 8
    if limb_bits % 8 != 0 or SEED_BYTES % limb_bytes != 0:
        raise ValueError(f"limb width {limb_bits} does not tile a {SEED_BYTES}-byte seed")
    return [
        int.from_bytes(seed.data[k : k + limb_bytes], "little")
        for k in range(0, SEED_BYTES, limb_bytes)
    ]


def limbs_to_seed(limbs: Sequence[int], limb_bits: int = DEFAULT_LIMB_BITS) -> Seed:
    limb_bytes = limb_bits // 8
    data = b"".join(int(v).to_bytes(limb_bytes, "little") for v in limbs)
    return Seed(data)


# ---- scalar sharing (any prime modulus) ----


def _check_params(n: int, degree: int, modulus: FieldModulus) -> None:
    if degree >= n:
        raise DegreeTooLarge(f"degree {degree} needs at least {degree + 1} of {n} shares")
    if n >= modulus.q:
        raise ValueError(f"party count {n} must be below the modulus {modulus.q}")


def share_limbs(
    limbs: Sequence[int],
    n: int,
    degree: int,
    coeff_words: Iterator[int],
    modulus: FieldModulus,
) -> List[Share]:
    """Share each limb with an independent random degree-`degree` polynomial.

    coeff_words supplies the polynomial coefficients via rejection sampling,
    so dealing is deterministic given the stream.  Evaluation points are
    1..n; the secret sits at zero.
    """
    _check_params(n, degree, modulus)
    q = modulus.q
    polys = []
    for limb in limbs:
        if not 0 <= limb < q:
            raise ValueError(f"limb {limb} is not a field element mod {q}")
        coeffs = [limb] + [modulus.sample_uniform(coeff_words) for _ in range(degree)]
        polys.append(coeffs)
    shares = []
    for x in range(1, n + 1):
        values = []
        for coeffs in polys:
            acc = 0
            for c in reversed(coeffs):
                acc = (acc * x + c) % q
            values.append(acc)
        shares.append(Share(x, tuple(values)))
    return shares


def _lagrange_at(x_target: int, xs: Sequence[int], q: int) -> List[int]:
    """Lagrange basis coefficients evaluated at x_target for points xs."""
    coeffs = []
    for k, xk in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if j == k:
                continue
            num = num * ((x_target - xj) % q) % q
            den = den * ((xk - xj) % q) % q
        coeffs.append(num * pow(den, q - 2, q) % q)
    return coeffs


def lagrange_at_zero(xs: Sequence[int], modulus: FieldModulus) -> List[int]:
    return _lagrange_at(0, xs, modulus.q)


def reconstruct_limbs(
    shares: Sequence[Share],
    degree: int,
    modulus: FieldModulus,
) -> List[int]:
    """Interpolate every limb at zero from at least degree+1 shares.

    When more than degree+1 shares are supplied, the extras are checked
    against the interpolated polynomials; a mismatch means some share is
    corrupt and no subset can be trusted, so the call fails loudly rather
    than returning whichever answer the chosen subset happens to give.
    """
    by_holder = {}
    for s in shares:
        if s.holder_index in by_holder and by_holder[s.holder_index] != s:
            raise InconsistentShares(f"conflicting shares for holder {s.holder_index}")
        by_holder[s.holder_index] = s
    if len(by_holder) < degree + 1:
        raise InsufficientShares(
            f"need {degree + 1} distinct shares to reconstruct, got {len(by_holder)}"
        )
    ordered = sorted(by_holder.values(), key=lambda s: s.holder_index)
    base, extra = ordered[: degree + 1], ordered[degree + 1 :]
    q = modulus.q
    xs = [s.holder_index for s in base]
    lam = lagrange_at_zero(xs, modulus)
    n_limbs = len(base[0].chunk_values)
    secrets = [
        sum(l * s.chunk_values[i] for l, s in zip(lam, base)) % q for i in range(n_limbs)
    ]
    for e in extra:
        basis = _lagrange_at(e.holder_index, xs, q)
        for i in range(n_limbs):
            predicted = sum(b * s.chunk_values[i] for b, s in zip(basis, base)) % q
            if predicted != e.chunk_values[i]:
                raise InconsistentShares(
                    f"share from holder {e.holder_index} is off the interpolated polynomial"
                )
    return secrets


def share_seed(
    seed: Seed,
    n: int,
    degree: int,
    coeff_words: Iterator[int],
    modulus: FieldModulus,
    limb_bits: int = DEFAULT_LIMB_BITS,
) -> List[Share]:
    if modulus.q <= 2**limb_bits - 1:
        raise ValueError(f"limb width {limb_bits} does not fit below modulus {modulus.q}")
    return share_limbs(seed_to_limbs(seed, limb_bits), n, degree, coeff_words, modulus)


def reconstruct_seed(
    shares: Sequence[Share],
    degree: int,
    modulus: FieldModulus,
    limb_bits: int = DEFAULT_LIMB_BITS,
) -> Seed:
    return limbs_to_seed(reconstruct_limbs(shares, degree, modulus), limb_bits)


# ---- batched sharing for moduli below 2^32 ----
#
# Polynomial evaluation is a matrix product between a Vandermonde matrix
# over the points 1..n and a coefficient matrix with one column per limb.
# Both operands are split into 16-bit halves so every partial product stays
# far below 2^53 and float64 BLAS computes it exactly; the halves are then
# recombined modulo q in uint64.

_U16 = np.uint64(0xFFFF)


def _split16(a: np.ndarray):
    return (a & _U16).astype(np.float64), (a >> np.uint64(16)).astype(np.float64)


def _mixed_matmul(va: np.ndarray, vb: np.ndarray, q: int) -> np.ndarray:
    """Exact (va @ vb) mod q for uint64 operands below 2^32."""
    a_lo, a_hi = _split16(va)
    b_lo, b_hi = _split16(vb)
    lo = (a_lo @ b_lo).astype(np.uint64) % np.uint64(q)
    mid = ((a_lo @ b_hi).astype(np.uint64) % np.uint64(q)) + (
        (a_hi @ b_lo).astype(np.uint64) % np.uint64(q)
    )
    hi = (a_hi @ b_hi).astype(np.uint64) % np.uint64(q)
    out = lo + (mid % np.uint64(q) << np.uint64(16)) % np.uint64(q)
    out += (hi << np.uint64(32)) % np.uint64(q)
    return out % np.uint64(q)


def vandermonde(xs: Sequence[int], n_coeffs: int, modulus: FieldModulus) -> np.ndarray:
    """V[i, k] = xs[i]^k mod q as uint64."""
    q = modulus.q
    v = np.empty((len(xs), n_coeffs), dtype=np.uint64)
    v[:, 0] = 1
    x = np.asarray(xs, dtype=np.uint64)
    for k in range(1, n_coeffs):
        v[:, k] = v[:, k - 1] * x % np.uint64(q)
    return v


def deal_shares_batch(
    limbs: np.ndarray,
    n: int,
    degree: int,
    coeff_fill: Callable[[int], np.ndarray],
    modulus: FieldModulus,
    chunk_columns: int = 200_000,
) -> np.ndarray:
    """Share many limbs at once; returns a (len(limbs), n) uint32 table.

    limbs is a uint64 vector of secrets (one polynomial each); coeff_fill(m)
    must return m uniform field elements for the non-constant coefficients,
    drawn deterministically from the dealing lane.  Column chunking keeps
    the float64 intermediates inside a few hundred megabytes.
    """
    if not modulus.fits_u32:
        raise ValueError("batched dealing requires a modulus below 2^32")
    _check_params(n, degree, modulus)
    m = limbs.shape[0]
    coeffs = np.empty((degree + 1, m), dtype=np.uint64)
    coeffs[0] = limbs
    if degree:
        coeffs[1:] = coeff_fill(degree * m).reshape(degree, m)
    v = vandermonde(range(1, n + 1), degree + 1, modulus)
    out = np.empty((m, n), dtype=np.uint32)
    for lo in range(0, m, chunk_columns):
        hi = min(lo + chunk_columns, m)
        out[lo:hi] = _mixed_matmul(v, coeffs[:, lo:hi], modulus.q).T
    return out


def stream_coefficients(
    stream,
    degree: int,
    n_limbs: int,
    modulus: FieldModulus,
) -> np.ndarray:
    """Non-constant polynomial coefficients for one seed's limbs.

    Defined to consume the stream exactly like repeated scalar
    sample_uniform calls in limb-major order (all coefficients of limb 0,
    then limb 1, ...), so the scalar and batched dealing paths produce
    identical shares.  The vectorized fast path applies whenever the first
    degree * n_limbs words all clear the rejection threshold, which at
    64-bit width is essentially always; otherwise the whole block is
    redrawn scalar-wise from word zero.  Returns uint64 [n_limbs, degree].
    """
    count = degree * n_limbs
    if count == 0:
        return np.empty((n_limbs, 0), dtype=np.uint64)
    words = stream.words_at(0, count)
    if int(words.max()) < modulus.rejection_threshold:
        return (words % np.uint64(modulus.q)).reshape(n_limbs, degree)
    it = stream.words()
    out = np.empty((n_limbs, degree), dtype=np.uint64)
    for limb in range(n_limbs):
        for k in range(degree):
            out[limb, k] = modulus.sample_uniform(it)
    return out


def evaluate_polynomials(
    coeffs: np.ndarray,
    xs: Sequence[int],
    modulus: FieldModulus,
    chunk_columns: int = 200_000,
) -> np.ndarray:
    """Evaluate many polynomials at the given points, one polynomial per
    column of coeffs (row k holds coefficient k).  Returns uint64
    [len(xs), n_polys].  This is the share table restricted to whichever
    holders a round actually needs, so shares never have to be stored."""
    if not modulus.fits_u32:
        raise ValueError("batched evaluation requires a modulus below 2^32")
    v = vandermonde(xs, coeffs.shape[0], modulus)
    m = coeffs.shape[1]
    out = np.empty((len(xs), m), dtype=np.uint64)
    for lo in range(0, m, chunk_columns):
        hi = min(lo + chunk_columns, m)
        out[:, lo:hi] = _mixed_matmul(v, coeffs[:, lo:hi], modulus.q)
    return out


def reconstruct_batch(
    share_rows: np.ndarray,
    holder_indices: Sequence[int],
    modulus: FieldModulus,
    chunk_rows: int = 200_000,
) -> np.ndarray:
    """Interpolate many secrets at zero from a (m_secrets, m_shares) table.

    share_rows[s, k] is the share of secret s held by party
    holder_indices[k]; every secret must be covered by the same holders,
    which is how the server collects them in a round.  Row chunking keeps
    the float64 intermediates bounded.
    """
    lam = np.asarray(lagrange_at_zero(list(holder_indices), modulus), dtype=np.uint64)
    m = share_rows.shape[0]
    out = np.empty(m, dtype=np.uint64)
    for lo in range(0, m, chunk_rows):
        hi = min(lo + chunk_rows, m)
        block = share_rows[lo:hi].astype(np.uint64)
        out[lo:hi] = _mixed_matmul(block, lam[:, None], modulus.q)[:, 0]
    return out
