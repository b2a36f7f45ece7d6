"""Pairwise seed agreement: Diffie-Hellman and dealer modes.

Every pair of users needs two shared 32-byte master seeds, one for the
additive mask lane and one for the binary mask lane.  Two interchangeable
mechanisms produce them:

* Diffie-Hellman over a fixed 512-bit safe-prime group.  Small by modern
  standards and deliberately so; the simulator is not a production key
  exchange and the group size only has to make the simulation honest.
  Public values are checked for prime-order subgroup membership before use.

* Dealer mode, the simulator default: a master key held by the test
  harness derives every pairwise seed with an HMAC.  Both parties of a
  pair evaluate the same PRF so the construction is trivially symmetric.

Both modes bind the sorted pair (i, j) and a purpose label into the seed,
so the additive and binary seeds of a pair are domain-separated and seeds
never collide across pairs.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from .errors import InvalidGroupElement
from .prg import SEED_BYTES, Seed

# 512-bit safe prime (p = 2*q' + 1 with q' prime); generator 4 = 2^2 is a
# quadratic residue and therefore generates the prime-order subgroup.
DH_PRIME = int(
    "0xaf5d76782af8ca838b3fea1de8fdd5d6746370d1b6400ab436a2bd3e9c24a0db"
    "2f5d76782af8ca838b3fea1de8fdd5d6746370d1b6400ab436a2bd3e9c25b633",
    16,
)
DH_SUBGROUP_ORDER = (DH_PRIME - 1) // 2
DH_GENERATOR = 4
_DH_BYTES = (DH_PRIME.bit_length() + 7) // 8

PURPOSE_ADDITIVE = b"additive"
PURPOSE_BINARY = b"binary"


@dataclass(frozen=True)
class KeyPair:
    """A private exponent and the matching public group element."""

    secret: int
    public: int


def generate_keypair(secret_source: bytes) -> KeyPair:
    """Derive a keypair from 32+ bytes of secret material."""
    if len(secret_source) < 32:
        raise ValueError("need at least 32 bytes of secret material")
    exponent = int.from_bytes(secret_source, "big") % (DH_SUBGROUP_ORDER - 2) + 2
    return KeyPair(exponent, pow(DH_GENERATOR, exponent, DH_PRIME))


def check_group_element(y: int) -> None:
    """Reject values outside the prime-order subgroup."""
    if not 1 < y < DH_PRIME - 1:
        raise InvalidGroupElement(f"public value {y} is outside the group range")
    if pow(y, DH_SUBGROUP_ORDER, DH_PRIME) != 1:
        raise InvalidGroupElement("public value is not in the prime-order subgroup")


def _derive(material: bytes, i: int, j: int, purpose: bytes) -> Seed:
    lo, hi = sorted((i, j))
    msg = b"pairseed|" + lo.to_bytes(4, "little") + hi.to_bytes(4, "little") + b"|" + purpose
    return Seed(hmac.new(material, msg, hashlib.sha256).digest())


def agree_pairwise_seed(
    my_keypair: KeyPair,
    their_public: int,
    pair: tuple,
    purpose: bytes,
) -> Seed:
    """Diffie-Hellman agreement; both endpoints derive the identical seed."""
    check_group_element(their_public)
    shared = pow(their_public, my_keypair.secret, DH_PRIME)
    i, j = pair
    return _derive(shared.to_bytes(_DH_BYTES, "big"), i, j, purpose)


def dealer_pairwise_seed(dealer_key: bytes, pair: tuple, purpose: bytes) -> Seed:
    """Dealer-mode agreement: the same PRF evaluated by both parties."""
    i, j = pair
    return _derive(dealer_key, i, j, purpose)


def dealer_private_seed(dealer_key: bytes, i: int) -> Seed:
    """Per-user private mask seed in dealer mode."""
    msg = b"privseed|" + i.to_bytes(4, "little")
    return Seed(hmac.new(dealer_key, msg, hashlib.sha256).digest())


def derive_seed(material: bytes, label: bytes) -> Seed:
    """Utility for simulator plumbing: a labeled 32-byte seed from material."""
    assert SEED_BYTES == hashlib.sha256().digest_size
    return Seed(hmac.new(material, label, hashlib.sha256).digest())
