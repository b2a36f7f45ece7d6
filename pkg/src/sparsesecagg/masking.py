"""Expansion of agreed seeds into mask vectors and selection sets.

Three mask families per user and round:

* a private additive mask r_i, uniform over F_q, length d;
* a pairwise additive mask r_ij per peer, uniform over F_q, identical at
  both endpoints because it is expanded from the shared seed;
* a pairwise binary mask b_ij, one Bernoulli(alpha / (N-1)) bit per
  coordinate, again identical at both endpoints.

The selection set U_i is every coordinate where at least one binary mask
is set; it determines which coordinates user i transmits.

Lane layout is coordinate-addressable: the word for coordinate l is word l
of the (seed, tag, round) lane, and a rejected additive draw retries at
l + d, l + 2d, ...  Materializing a mask only at chosen coordinates is
therefore value-identical to full expansion, which keeps memory at
O(selected) instead of O(N * d) per user.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Optional, Tuple

import numpy as np

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from .errors import StreamExhausted
from .field import MAX_REJECTIONS, FieldModulus
from .prg import DomainTag, PrgStream, Seed, lane_nonce


def selection_probability(alpha: float, n: int) -> float:
    """Probability that a fixed coordinate lands in a user's selection set:
    1 - (1 - alpha/(n-1))^(n-1)."""
    if n < 2:
        raise ValueError(f"cohort size must be at least 2, got {n}")
    if not 0.0 < alpha <= n - 1:
        raise ValueError(f"alpha must be in (0, {n - 1}], got {alpha}")
    return 1.0 - (1.0 - alpha / (n - 1)) ** (n - 1)


def binary_threshold(alpha: float, n: int) -> int:
    """Exact integer threshold: a word w selects its coordinate iff
    w < floor((alpha / (n-1)) * 2^64).  Computed in exact rational
    arithmetic so every implementation of the comparison agrees."""
    rate = Fraction(alpha) / (n - 1)
    return min((rate.numerator << 64) // rate.denominator, 1 << 64)


def _binary_words(seed: Seed, round_index: int, d: int) -> np.ndarray:
    return PrgStream(seed, DomainTag.BINARY, round_index).words_at(0, d)


def expand_binary_mask(seed: Seed, round_index: int, d: int, alpha: float, n: int) -> np.ndarray:
    """The full Bernoulli bit vector for one pair lane."""
    thr = binary_threshold(alpha, n)
    if thr >= 1 << 64:
        return np.ones(d, dtype=bool)
    return _binary_words(seed, round_index, d) < np.uint64(thr)


def binary_support(seed: Seed, round_index: int, d: int, alpha: float, n: int) -> np.ndarray:
    """Sorted indices of the set bits; same comparison as expand_binary_mask."""
    thr = binary_threshold(alpha, n)
    if thr >= 1 << 64:
        return np.arange(d, dtype=np.int64)
    return np.flatnonzero(_binary_words(seed, round_index, d) < np.uint64(thr)).astype(np.int64)


def _lane_field_values(
    stream: PrgStream,
    d: int,
    coords: Optional[np.ndarray],
    modulus: FieldModulus,
) -> np.ndarray:
    """Uniform field elements of a lane, at all d coordinates or a subset."""
    words = stream.words_at(0, d)
    sel = words if coords is None else words[coords]
    thr = np.uint64(modulus.rejection_threshold)
    values = sel % np.uint64(modulus.q)
    bad = np.flatnonzero(sel >= thr)
    for pos in bad:
        coordinate = int(pos) if coords is None else int(coords[pos])
        for attempt in range(1, MAX_REJECTIONS + 2):
            if attempt > MAX_REJECTIONS:
                raise StreamExhausted(
                    f"coordinate {coordinate}: {MAX_REJECTIONS} rejected words"
                )
            w = int(stream.words_at(attempt * d + coordinate, 1)[0])
            if w < modulus.rejection_threshold:
                values[pos] = w % modulus.q
                break
    return values


def expand_additive_mask(
    seed: Seed,
    round_index: int,
    lane: DomainTag,
    d: int,
    modulus: FieldModulus,
) -> np.ndarray:
    """Full-length uniform mask vector for an additive lane."""
    if lane not in (DomainTag.ADDITIVE_PAIRWISE, DomainTag.ADDITIVE_PRIVATE):
        raise ValueError(f"not an additive lane: {lane!r}")
    return _lane_field_values(PrgStream(seed, lane, round_index), d, None, modulus)


def additive_mask_at(
    seed: Seed,
    round_index: int,
    lane: DomainTag,
    d: int,
    coords: np.ndarray,
    modulus: FieldModulus,
) -> np.ndarray:
    """Mask values at selected coordinates only; agrees with full expansion."""
    if lane not in (DomainTag.ADDITIVE_PAIRWISE, DomainTag.ADDITIVE_PRIVATE):
        raise ValueError(f"not an additive lane: {lane!r}")
    return _lane_field_values(PrgStream(seed, lane, round_index), d, coords, modulus)


@dataclass
class MaskSet:
    """One user's expanded masks for one round.

    binary_masks maps each peer to the sorted support of the shared bit
    vector (the set coordinates) and pairwise_masks maps each peer to the
    additive mask values at exactly those coordinates; off-support values
    are never materialized because they are never used.
    """

    user: int
    d: int
    private_mask: np.ndarray
    binary_masks: Dict[int, np.ndarray] = field(default_factory=dict)
    pairwise_masks: Dict[int, np.ndarray] = field(default_factory=dict)
    selection_set: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


PairCache = Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]]


def pair_masks(
    pair_seeds: Tuple[Seed, Seed],
    pair: Tuple[int, int],
    round_index: int,
    d: int,
    alpha: float,
    n: int,
    modulus: FieldModulus,
    cache: Optional[PairCache] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """(support, additive values at support) for one pair and round.

    Both endpoints of a pair call this with the same seeds and get the
    same arrays, which is the cancellation precondition; the optional
    cache lets a simulator compute each pair once per round.
    """
    key = (min(pair), max(pair))
    if cache is not None and key in cache:
        return cache[key]
    additive_seed, binary_seed = pair_seeds
    support = binary_support(binary_seed, round_index, d, alpha, n)
    values = additive_mask_at(
        additive_seed, round_index, DomainTag.ADDITIVE_PAIRWISE, d, support, modulus
    )
    if cache is not None:
        cache[key] = (support, values)
    return support, values


def materialize_pair_masks(
    pair_seed_map: Dict[Tuple[int, int], Tuple[Seed, Seed]],
    round_index: int,
    d: int,
    alpha: float,
    n: int,
    modulus: FieldModulus,
    cache: PairCache,
) -> None:
    """Fill `cache` with (support, values) for every pair in pair_seed_map.

    Value-identical to calling pair_masks once per pair, but one tight
    loop with reused scratch buffers: a large cohort has ~N^2/2 pairs per
    round and the per-pair stream-object and allocation overhead would
    otherwise dominate the simulator.  Entries already in the cache are
    kept as they are.
    """
    thr = binary_threshold(alpha, n)
    full = thr >= 1 << 64
    q = np.uint64(modulus.q)
    binary_nonce = lane_nonce(DomainTag.BINARY, round_index)
    additive_nonce = lane_nonce(DomainTag.ADDITIVE_PAIRWISE, round_index)
    zeros = bytes(8 * d)
    zeros_view = memoryview(zeros)
    buf = bytearray(8 * d)
    buf_view = memoryview(buf)
    words = np.frombuffer(buf, dtype="<u8")
    select = np.empty(d, dtype=bool)
    uthr = np.uint64(0) if full else np.uint64(thr)

    for key in sorted(pair_seed_map):
        if key in cache:
            continue
        additive_seed, binary_seed = pair_seed_map[key]
        if full:
            support = np.arange(d, dtype=np.int64)
        else:
            enc = Cipher(algorithms.ChaCha20(binary_seed.data, binary_nonce), mode=None)
            enc.encryptor().update_into(zeros, buf)
            np.less(words, uthr, out=select)
            support = np.flatnonzero(select).astype(np.int64, copy=False)
        if support.size:
            nbytes = 8 * (int(support[-1]) + 1)
            enc = Cipher(algorithms.ChaCha20(additive_seed.data, additive_nonce), mode=None)
            enc.encryptor().update_into(zeros_view[:nbytes], buf_view[:nbytes])
            raw = words[support]
            if int(raw.max()) < modulus.rejection_threshold:
                values = raw % q
            else:
                values = additive_mask_at(
                    additive_seed, round_index, DomainTag.ADDITIVE_PAIRWISE, d, support, modulus
                )
        else:
            values = np.empty(0, dtype=np.uint64)
        cache[key] = (support, values)


def build_mask_set(
    user: int,
    pair_seeds: Dict[int, Tuple[Seed, Seed]],
    private_seed: Seed,
    round_index: int,
    d: int,
    alpha: float,
    n: int,
    modulus: FieldModulus,
    cache: Optional[PairCache] = None,
) -> MaskSet:
    """Expand every mask user `user` needs for one round and compute U_i."""
    masks = MaskSet(
        user=user,
        d=d,
        private_mask=expand_additive_mask(
            private_seed, round_index, DomainTag.ADDITIVE_PRIVATE, d, modulus
        ),
    )
    supports = []
    for peer, seeds in sorted(pair_seeds.items()):
        support, values = pair_masks(
            seeds, (user, peer), round_index, d, alpha, n, modulus, cache
        )
        masks.binary_masks[peer] = support
        masks.pairwise_masks[peer] = values
        supports.append(support)
    if supports:
        masks.selection_set = np.unique(np.concatenate(supports))
    return masks
