"""Exact arithmetic in the prime field F_q and the signed-value embedding.

Field elements are represented as plain Python ints in [0, q) for scalar
work and as numpy uint64 arrays for vector work.  All reductions are exact;
nothing here relies on floating point.  The embedding phi maps signed
integers with |z| < q/2 onto the field by using the lower half for
non-negative values and the upper half for negative values, so that sums of
signed values can be carried out in the field and decoded afterwards.

Not hardened against timing side channels; this is a research artifact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, MagnitudeOverflow, StreamExhausted

# A word drawn from a byte stream is 64 bits, little-endian, everywhere in
# this package.  Rejection sampling gives up after this many rejected words
# in a row, which for any q above a few thousand signals a broken generator
# rather than bad luck.
WORD_BITS = 64
MAX_REJECTIONS = 128

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def _is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, valid for all n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldModulus:
    """A validated prime modulus plus derived constants.

    The modulus must be an odd prime so the two halves [0, q/2) and
    (q/2, q) used by phi are disjoint and cover everything but the
    midpoint, which cannot occur.
    """

    q: int

    def __post_init__(self) -> None:
        if self.q < 3:
            raise ConfigError("q", f"modulus must be an odd prime, got {self.q}")
        if not _is_prime(self.q):
            raise ConfigError("q", f"modulus must be prime, got {self.q}")

    @cached_property
    def max_magnitude(self) -> int:
        """Largest |z| embeddable by phi: (q-1)/2, i.e. |z| < q/2."""
        return (self.q - 1) // 2

    @cached_property
    def rejection_threshold(self) -> int:
        """Words >= q * floor(2^64 / q) are rejected to keep w % q uniform."""
        return self.q * (2**WORD_BITS // self.q)

    @cached_property
    def fits_u32(self) -> bool:
        """True when elements fit 32 bits, enabling the fast vector paths."""
        return self.q < 2**32

    # ---- signed embedding ----

    def phi(self, z: int) -> int:
        """Embed a signed integer: z for z >= 0, q + z for z < 0."""
        if abs(z) > self.max_magnitude:
            raise MagnitudeOverflow(
                f"|{z}| >= q/2 = {self.q / 2}; value would decode ambiguously"
            )
        return z if z >= 0 else self.q + z

    def phi_inv(self, x: int) -> int:
        """Decode a field element back to a signed integer in (-q/2, q/2)."""
        return x if x <= self.max_magnitude else x - self.q

    def phi_inv_array(self, x: np.ndarray) -> np.ndarray:
        """Vector phi_inv: uint64 array of field elements to int64."""
        signed = x.astype(np.int64)
        return np.where(signed > self.max_magnitude, signed - self.q, signed)

    # ---- modular arithmetic ----

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.q

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.q

    def sum(self, elements: Iterable[int]) -> int:
        total = 0
        for e in elements:
            total += e
        return total % self.q

    # ---- uniform sampling ----

    def sample_uniform(self, words: Iterator[int]) -> int:
        """Draw one uniform field element from a stream of 64-bit words.

        Words at or above the rejection threshold are discarded so the
        final reduction is exactly uniform on [0, q).
        """
        threshold = self.rejection_threshold
        for _ in range(MAX_REJECTIONS + 1):
            try:
                w = next(words)
            except StopIteration:
                raise StreamExhausted("word stream ended during rejection sampling")
            if w < threshold:
                return w % self.q
        raise StreamExhausted(
            f"{MAX_REJECTIONS} consecutive words rejected; generator is broken"
        )


DEFAULT_MODULUS = FieldModulus(2**31 - 1)


def sample_uniform_field(words: Iterator[int], modulus: FieldModulus = DEFAULT_MODULUS) -> int:
    """Module-level convenience wrapper around FieldModulus.sample_uniform."""
    return modulus.sample_uniform(words)
