"""Deterministic ChaCha20-backed pseudorandom streams with lane separation.

A 32-byte seed spawns independent lanes addressed by (domain tag, round
index).  The cipher's 16-byte initialization value is laid out as

    bytes 0..7    64-bit little-endian block counter (seek position)
    byte  8       domain tag
    bytes 9..12   32-bit little-endian round index
    bytes 13..15  zero

so keystream is a pure function of (seed, tag, round, position) and any
lane can be read at an arbitrary 64-bit word offset without generating the
output before it.  That random access is what lets sparse mask
materialization agree bit-for-bit with full expansion.

The byte layout is frozen; golden tests guard it across releases.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

SEED_BYTES = 32
_BLOCK = 64  # ChaCha20 block size in bytes
_MAX_ROUND = 2**32

# Reusable all-zero plaintext buffers, keyed by size.  Mask expansion asks
# for the same handful of sizes over and over; caching avoids re-zeroing.
_zeros_cache: dict[int, bytes] = {}


def _zeros(n: int) -> bytes:
    buf = _zeros_cache.get(n)
    if buf is None:
        if len(_zeros_cache) > 32:
            _zeros_cache.clear()
        buf = bytes(n)
        _zeros_cache[n] = buf
    return buf


class DomainTag(IntEnum):
    """Lane identifiers.  The first four are the protocol's mask lanes;
    DEALING feeds sharing-polynomial coefficients at setup time only."""

    ADDITIVE_PAIRWISE = 0
    ADDITIVE_PRIVATE = 1
    BINARY = 2
    QUANTIZER = 3
    DEALING = 4


@dataclass(frozen=True, slots=True)
class Seed:
    """A 32-byte PRG seed."""

    data: bytes

    def __post_init__(self) -> None:
        if len(self.data) != SEED_BYTES:
            raise ValueError(f"seed must be {SEED_BYTES} bytes, got {len(self.data)}")


def lane_nonce(tag: DomainTag, round_index: int, block: int = 0) -> bytes:
    """ChaCha20 nonce addressing one 64-byte block of a (tag, round) lane:
    block counter (8B LE) | tag (1B) | round (4B LE) | zero padding (3B)."""
    return (
        block.to_bytes(8, "little")
        + bytes([int(tag)])
        + round_index.to_bytes(4, "little")
        + b"\x00\x00\x00"
    )


class PrgStream:
    """One (seed, tag, round) lane of keystream.

    Supports both sequential reads (read / read_words, tracking an internal
    position) and random access by word index (words_at).  Instances are
    single-owner: the sequential position is mutable state.
    """

    def __init__(self, seed: Seed, tag: DomainTag, round_index: int):
        if not 0 <= round_index < _MAX_ROUND:
            raise ValueError(f"round index out of range: {round_index}")
        self._key = seed.data
        self._tag = tag
        self._round = round_index
        self._pos = 0

    def _keystream(self, start: int, n: int) -> memoryview:
        """Generate n keystream bytes beginning at absolute byte offset start."""
        block, offset = divmod(start, _BLOCK)
        total = offset + n
        nonce = lane_nonce(self._tag, self._round, block)
        enc = Cipher(algorithms.ChaCha20(self._key, nonce), mode=None).encryptor()
        buf = bytearray(total)
        enc.update_into(_zeros(total), buf)
        return memoryview(buf)[offset:]

    # ---- sequential interface ----

    def read(self, n: int) -> bytes:
        out = bytes(self._keystream(self._pos, n))
        self._pos += n
        return out

    def read_words(self, count: int) -> np.ndarray:
        """Next `count` 64-bit little-endian words as a uint64 array."""
        view = self._keystream(self._pos, count * 8)
        self._pos += count * 8
        return np.frombuffer(view, dtype="<u8")

    def words(self) -> Iterator[int]:
        """Unbounded iterator of words, for scalar rejection sampling."""
        while True:
            for w in self.read_words(16):
                yield int(w)

    # ---- random access ----

    def words_at(self, start_word: int, count: int) -> np.ndarray:
        """Words [start_word, start_word + count) without moving the position."""
        view = self._keystream(start_word * 8, count * 8)
        return np.frombuffer(view, dtype="<u8")


def prg_bytes(seed: Seed, tag: DomainTag, round_index: int, n: int) -> bytes:
    """The first n bytes of a lane; convenience for tests and seed derivation."""
    return PrgStream(seed, tag, round_index).read(n)
