"""Round orchestration for sparsified secure aggregation.

One round, from each surviving user's point of view:

  1. clip and quantize the local gradient into field elements (ybar_i);
  2. expand this round's masks and form, coordinate-wise,

       x_i(l) = 1[l in U_i] * (ybar_i(l) + r_i(l))
                + sum_{j > i} b_ij(l) * r_ij(l)
                - sum_{j < i} b_ij(l) * r_ij(l)

     where U_i is the union of the binary supports against all peers;
  3. send the coordinates in U_i as a sparse message.

The server adds the messages coordinate-wise and then removes everything
the masks contributed: each survivor's private mask is re-expanded from a
reconstructed seed and subtracted on that survivor's transmitted support,
and for every (dropped i, surviving j) pair the pairwise mask is
re-expanded on the pair's binary support and removed with the sign j
applied in step 2.  Pairwise masks between two survivors cancel in the
sum and are never touched.

Seed custody works over a single dealing: every private and pairwise seed
is split into 16-bit limbs (8-bit when the modulus is tiny) and each limb
is shared with a random polynomial of degree floor(N/2) evaluated at the
points 1..N, so any floor(N/2)+1 survivors are enough to rebuild exactly
the seeds a round needs.  Dealing randomness is addressed per seed, which
makes share values derivable on demand; that is value-identical to
storing the full share table at setup but avoids its N^2 memory cost.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dataclass_field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import shamir
from .agreement import (
    KeyPair,
    PURPOSE_ADDITIVE,
    PURPOSE_BINARY,
    agree_pairwise_seed,
    dealer_pairwise_seed,
    dealer_private_seed,
    derive_seed,
    generate_keypair,
)
from .errors import (
    ConfigError,
    DuplicateUser,
    TooManyDropouts,
)
from .field import DEFAULT_MODULUS, FieldModulus
from .masking import (
    PairCache,
    additive_mask_at,
    build_mask_set,
    expand_additive_mask,
    materialize_pair_masks,
    pair_masks,
    selection_probability,
)
from .prg import DomainTag, PrgStream, Seed
from .quantize import (
    QuantizationConfig,
    check_overflow_budget,
    clip_gradient,
    dequantize_aggregate,
    quantize_gradient,
    uniform01_from_words,
)

# ---------------------------------------------------------------------------
# configuration


class ProtocolMode(Enum):
    SPARSE = "sparse"
    BASELINE = "baseline"


@dataclass(frozen=True)
class ProtocolConfig:
    """Cohort-level protocol parameters.

    betas are the aggregation weights (uniform when omitted); gamma is the
    assumed fraction of honest-but-curious users colluding with the server
    and only enters the analysis and reporting paths.  alpha above 1 makes
    the per-pair selection rate alpha/(n-1) exceed its intended range and
    is only allowed under the stress flag.
    """

    n: int
    d: int
    alpha: float
    theta: float
    gamma: float
    c: int
    clip_bound: float
    modulus: FieldModulus = DEFAULT_MODULUS
    mode: ProtocolMode = ProtocolMode.SPARSE
    betas: Optional[Tuple[float, ...]] = None
    allow_alpha_above_one: bool = False

    def __post_init__(self) -> None:
        if self.n < 2 or int(self.n) != self.n:
            raise ConfigError("n", f"need at least 2 users, got {self.n}")
        if self.d < 1:
            raise ConfigError("d", f"dimension must be positive, got {self.d}")
        alpha_cap = self.n - 1 if self.allow_alpha_above_one else 1.0
        if not 0.0 < self.alpha <= alpha_cap:
            raise ConfigError("alpha", f"alpha must be in (0, {alpha_cap}], got {self.alpha}")
        if not 0.0 <= self.theta < 0.5:
            raise ConfigError("theta", f"dropout rate must be in [0, 0.5), got {self.theta}")
        if not 0.0 <= self.gamma < 0.5:
            raise ConfigError("gamma", f"adversary fraction must be in [0, 0.5), got {self.gamma}")
        if self.c < 1 or int(self.c) != self.c:
            raise ConfigError("c", f"quantization level must be a positive integer, got {self.c}")
        if self.clip_bound <= 0.0:
            raise ConfigError("clip_bound", f"clip bound must be positive, got {self.clip_bound}")
        if self.betas is not None:
            if len(self.betas) != self.n:
                raise ConfigError("betas", f"need {self.n} weights, got {len(self.betas)}")
            if any(b <= 0.0 for b in self.betas):
                raise ConfigError("betas", "weights must be positive")
            if abs(sum(self.betas) - 1.0) > 1e-9:
                raise ConfigError("betas", f"weights must sum to 1, got {sum(self.betas)}")

    @property
    def degree(self) -> int:
        return self.n // 2

    @property
    def reconstruction_threshold(self) -> int:
        return self.n // 2 + 1

    @property
    def p(self) -> float:
        """Coordinate selection probability; 1 in the dense baseline."""
        if self.mode is ProtocolMode.BASELINE:
            return 1.0
        return selection_probability(self.alpha, self.n)

    @property
    def beta_array(self) -> np.ndarray:
        if self.betas is None:
            return np.full(self.n, 1.0 / self.n)
        return np.asarray(self.betas, dtype=np.float64)

    def beta(self, i: int) -> float:
        return 1.0 / self.n if self.betas is None else self.betas[i]

    def quantization_config(self, i: int) -> QuantizationConfig:
        return QuantizationConfig(
            c=self.c,
            beta=self.beta(i),
            p=self.p,
            theta=self.theta,
            clip_bound=self.clip_bound,
        )

    def check_budget(self) -> float:
        """Verify the no-wraparound budget for this cohort; returns margin."""
        return check_overflow_budget(
            self.n,
            self.c,
            float(self.beta_array.max()),
            self.clip_bound,
            self.p,
            self.theta,
            self.modulus,
        )


# ---------------------------------------------------------------------------
# cohort setup: seeds, key agreement, dealing

SeedKey = Tuple
_KIND_PRIVATE = "priv"
_KIND_PAIR_ADDITIVE = "pair-add"
_KIND_PAIR_BINARY = "pair-bin"


def _le4(x: int) -> bytes:
    return struct.pack("<I", x)


def _seed_label(key: SeedKey) -> bytes:
    if key[0] == _KIND_PRIVATE:
        return b"deal|priv|" + _le4(key[1])
    kind, lo, hi = key
    return b"deal|" + kind.encode() + b"|" + _le4(lo) + _le4(hi)


def _seed_owner(key: SeedKey) -> int:
    """The user whose dealing key randomizes this seed's polynomials: a
    private seed is dealt by its user, a pairwise seed by the lower index."""
    return key[1]


class Cohort:
    """Key material, seed agreement, and seed custody for n users.

    mode "dealer" derives every seed from a trusted dealer key; mode "dh"
    gives each user a keypair in the verification-friendly DH group and
    agrees pairwise seeds from the shared group elements, while private
    seeds stay user-local.  Both modes expose the same seed addressing, so
    the rest of the protocol does not care which one produced a seed.
    """

    def __init__(self, cfg: ProtocolConfig, master_seed: int, mode: str = "dealer"):
        if mode not in ("dealer", "dh"):
            raise ConfigError("mode", f"unknown agreement mode {mode!r}")
        cfg.check_budget()
        self.cfg = cfg
        self.mode = mode
        self.limb_bits = 16 if cfg.modulus.q > 2**16 else 8
        self.n_limbs = 256 // self.limb_bits
        self._material = derive_seed(
            master_seed.to_bytes(8, "little"), b"cohort-material"
        ).data
        self._dealer_key = derive_seed(self._material, b"dealer-key").data
        self._deal_keys = [
            derive_seed(self._material, b"dealing-key|" + _le4(i)).data
            for i in range(cfg.n)
        ]
        self.keypairs: List[Optional[KeyPair]] = [None] * cfg.n
        if mode == "dh":
            self.keypairs = [
                generate_keypair(derive_seed(self._material, b"dh-secret|" + _le4(i)).data)
                for i in range(cfg.n)
            ]
        self._pair_seed_cache: Dict[Tuple[int, int], Tuple[Seed, Seed]] = {}
        self._reconstructed: Dict[SeedKey, Seed] = {}

    # -- seed values ---------------------------------------------------

    def private_seed(self, i: int) -> Seed:
        self._check_user(i)
        if self.mode == "dealer":
            return dealer_private_seed(self._dealer_key, i)
        return derive_seed(self._material, b"private-seed|" + _le4(i))

    def pair_seeds(self, i: int, j: int) -> Tuple[Seed, Seed]:
        """(additive seed, binary seed) shared by the pair {i, j}."""
        self._check_user(i)
        self._check_user(j)
        if i == j:
            raise ValueError("a user does not share a pair seed with itself")
        lo, hi = min(i, j), max(i, j)
        cached = self._pair_seed_cache.get((lo, hi))
        if cached is not None:
            return cached
        if self.mode == "dealer":
            seeds = (
                dealer_pairwise_seed(self._dealer_key, (lo, hi), PURPOSE_ADDITIVE),
                dealer_pairwise_seed(self._dealer_key, (lo, hi), PURPOSE_BINARY),
            )
        else:
            keypair = self.keypairs[lo]
            assert keypair is not None
            public = self.keypairs[hi].public  # type: ignore[union-attr]
            seeds = (
                agree_pairwise_seed(keypair, public, (lo, hi), PURPOSE_ADDITIVE),
                agree_pairwise_seed(keypair, public, (lo, hi), PURPOSE_BINARY),
            )
        self._pair_seed_cache[(lo, hi)] = seeds
        return seeds

    def pair_seeds_for(self, i: int) -> Dict[int, Tuple[Seed, Seed]]:
        return {j: self.pair_seeds(i, j) for j in range(self.cfg.n) if j != i}

    def seed_value(self, key: SeedKey) -> Seed:
        if key[0] == _KIND_PRIVATE:
            return self.private_seed(key[1])
        add_seed, bin_seed = self.pair_seeds(key[1], key[2])
        return add_seed if key[0] == _KIND_PAIR_ADDITIVE else bin_seed

    def all_seed_keys(self) -> List[SeedKey]:
        keys: List[SeedKey] = [(_KIND_PRIVATE, i) for i in range(self.cfg.n)]
        for lo in range(self.cfg.n):
            for hi in range(lo + 1, self.cfg.n):
                keys.append((_KIND_PAIR_ADDITIVE, lo, hi))
                keys.append((_KIND_PAIR_BINARY, lo, hi))
        return keys

    # -- dealing -------------------------------------------------------

    def coefficient_stream(self, key: SeedKey) -> PrgStream:
        """The dealing lane that randomizes this seed's share polynomials.
        Addressed per seed, so shares can be recomputed in any order."""
        coeff_seed = derive_seed(self._deal_keys[_seed_owner(key)], _seed_label(key))
        return PrgStream(coeff_seed, DomainTag.DEALING, 0)

    def shares_for(self, keys: Sequence[SeedKey], holders: Sequence[int]) -> np.ndarray:
        """Share table rows for the given seeds at the given holders.

        Returns uint64 [len(keys) * n_limbs, len(holders)]; row order is
        limb-major within each key.  holders are user indices; the share
        point of user i is i + 1.
        """
        cfg = self.cfg
        degree = cfg.degree
        xs = [h + 1 for h in holders]
        n_limbs = self.n_limbs
        if cfg.modulus.fits_u32:
            coeffs = np.empty((degree + 1, len(keys) * n_limbs), dtype=np.uint64)
            for k, key in enumerate(keys):
                block = slice(k * n_limbs, (k + 1) * n_limbs)
                coeffs[0, block] = shamir.seed_to_limbs(self.seed_value(key), self.limb_bits)
                coeffs[1:, block] = shamir.stream_coefficients(
                    self.coefficient_stream(key), degree, n_limbs, cfg.modulus
                ).T
            return shamir.evaluate_polynomials(coeffs, xs, cfg.modulus).T
        out = np.empty((len(keys) * n_limbs, len(holders)), dtype=np.uint64)
        for k, key in enumerate(keys):
            shares = shamir.share_seed(
                self.seed_value(key),
                cfg.n,
                degree,
                self.coefficient_stream(key).words(),
                cfg.modulus,
                self.limb_bits,
            )
            for col, h in enumerate(holders):
                out[k * n_limbs : (k + 1) * n_limbs, col] = shares[h].chunk_values
        return out

    def bundle_for(self, holder: int) -> "ShareBundle":
        """Everything one user stores after dealing.  Materializes a Share
        per seed in the cohort, so this is for small-n inspection."""
        self._check_user(holder)
        keys = self.all_seed_keys()
        table = self.shares_for(keys, [holder])
        shares = {}
        for k, key in enumerate(keys):
            values = tuple(int(v) for v in table[k * self.n_limbs : (k + 1) * self.n_limbs, 0])
            shares[key] = shamir.Share(holder + 1, values)
        return ShareBundle(holder=holder, shares=shares)

    # -- server-side reconstruction -------------------------------------

    def reconstruct_seeds(self, keys: Sequence[SeedKey], holders: Sequence[int]) -> List[Seed]:
        """Rebuild seeds from the holders' shares, reusing past rebuilds.

        The happy path batches every uncached seed into one interpolation;
        reconstruction failures (too few or inconsistent shares) surface
        from the shamir layer.
        """
        missing = [key for key in keys if key not in self._reconstructed]
        if missing:
            if len(holders) < self.cfg.degree + 1:
                raise TooManyDropouts(
                    f"{len(holders)} shares cannot meet the reconstruction "
                    f"threshold {self.cfg.reconstruction_threshold}"
                )
            table = self.shares_for(missing, holders)
            xs = [h + 1 for h in holders]
            if self.cfg.modulus.fits_u32:
                secrets = shamir.reconstruct_batch(table, xs, self.cfg.modulus)
                for k, key in enumerate(missing):
                    limbs = secrets[k * self.n_limbs : (k + 1) * self.n_limbs]
                    self._reconstructed[key] = shamir.limbs_to_seed(
                        [int(v) for v in limbs], self.limb_bits
                    )
            else:
                for k, key in enumerate(missing):
                    shares = [
                        shamir.Share(
                            xs[col],
                            tuple(int(v) for v in table[k * self.n_limbs : (k + 1) * self.n_limbs, col]),
                        )
                        for col in range(len(xs))
                    ]
                    self._reconstructed[key] = shamir.reconstruct_seed(
                        shares, self.cfg.degree, self.cfg.modulus, self.limb_bits
                    )
        return [self._reconstructed[key] for key in keys]

    def _check_user(self, i: int) -> None:
        if not 0 <= i < self.cfg.n:
            raise ValueError(f"user index {i} outside cohort of {self.cfg.n}")


def setup_cohort(cfg: ProtocolConfig, master_seed: int, mode: str = "dealer") -> Cohort:
    return Cohort(cfg, master_seed, mode)


@dataclass
class ShareBundle:
    """All shares one user holds after dealing, keyed by the seed they
    protect: ("priv", i), ("pair-add", lo, hi) or ("pair-bin", lo, hi)."""

    holder: int
    shares: Dict[SeedKey, shamir.Share]


# ---------------------------------------------------------------------------
# messages


@dataclass
class SparseMaskedGradient:
    """One user's message: masked values at the selected coordinates.

    Wire layout: user_id (4B LE) | count (4B LE) | locations (4B LE each,
    ascending) | values (8B LE each).
    """

    user_id: int
    locations: np.ndarray
    values: np.ndarray

    def byte_size(self) -> int:
        return 8 + 12 * len(self.locations)

    def to_bytes(self) -> bytes:
        count = len(self.locations)
        return (
            struct.pack("<II", self.user_id, count)
            + self.locations.astype("<u4").tobytes()
            + self.values.astype("<u8").tobytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SparseMaskedGradient":
        if len(blob) < 8:
            raise ValueError("truncated message header")
        user_id, count = struct.unpack_from("<II", blob, 0)
        if len(blob) != 8 + 12 * count:
            raise ValueError(f"message length {len(blob)} does not match count {count}")
        locations = np.frombuffer(blob, dtype="<u4", count=count, offset=8).astype(np.int64)
        values = np.frombuffer(blob, dtype="<u8", count=count, offset=8 + 4 * count).astype(
            np.uint64
        )
        if count and np.any(np.diff(locations) <= 0):
            raise ValueError("locations must be strictly ascending")
        return cls(user_id=user_id, locations=locations, values=values)


@dataclass
class DenseMaskedGradient:
    """Baseline message carrying every coordinate: user_id (4B LE) |
    count=d (4B LE) | values (8B LE each)."""

    user_id: int
    values: np.ndarray

    def byte_size(self) -> int:
        return 8 + 8 * len(self.values)

    def to_bytes(self) -> bytes:
        return struct.pack("<II", self.user_id, len(self.values)) + self.values.astype(
            "<u8"
        ).tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DenseMaskedGradient":
        user_id, count = struct.unpack_from("<II", blob, 0)
        if len(blob) != 8 + 8 * count:
            raise ValueError(f"message length {len(blob)} does not match count {count}")
        values = np.frombuffer(blob, dtype="<u8", count=count, offset=8).astype(np.uint64)
        return cls(user_id=user_id, values=values)


_TRANSCRIPT_KINDS = {0: SparseMaskedGradient, 1: DenseMaskedGradient}


def transcript_to_bytes(messages: Sequence) -> bytes:
    """Length-prefixed message sequence for replay: for each message,
    length (4B LE, covering the kind byte) | kind (1B) | payload."""
    parts = []
    for msg in messages:
        kind = 0 if isinstance(msg, SparseMaskedGradient) else 1
        payload = msg.to_bytes()
        parts.append(struct.pack("<IB", len(payload) + 1, kind) + payload)
    return b"".join(parts)


def transcript_from_bytes(blob: bytes) -> List:
    messages = []
    offset = 0
    while offset < len(blob):
        length, kind = struct.unpack_from("<IB", blob, offset)
        payload = blob[offset + 5 : offset + 4 + length]
        if len(payload) != length - 1:
            raise ValueError("truncated transcript entry")
        messages.append(_TRANSCRIPT_KINDS[kind].from_bytes(payload))
        offset += 4 + length
    return messages


# ---------------------------------------------------------------------------
# client side


def build_masked_gradient(ybar, masks, user: int, modulus: FieldModulus) -> SparseMaskedGradient:
    """Apply a user's masks to its quantized gradient.

    ybar is the full quantized vector; only the selection-set coordinates
    survive into the message.  Pairwise masks enter with sign +1 against
    higher-indexed peers and -1 against lower-indexed ones, so each pair
    cancels when both endpoints' messages are added.
    """
    q = np.uint64(modulus.q)
    acc = np.zeros(masks.d, dtype=np.uint64)
    selected = masks.selection_set
    # Every term is < q and a coordinate receives at most one term per peer
    # plus the gradient and the private mask, so as long as that many terms
    # fit in a uint64 the reduction can wait until the end.
    terms = len(masks.binary_masks) + 2
    if terms * modulus.q < 1 << 64:
        acc[selected] = ybar[selected] + masks.private_mask[selected]
        for peer, support in masks.binary_masks.items():
            values = masks.pairwise_masks[peer]
            np.add.at(acc, support, values if peer > user else q - values)
        acc[selected] %= q
    else:
        acc[selected] = (ybar[selected] + masks.private_mask[selected]) % q
        for peer, support in masks.binary_masks.items():
            values = masks.pairwise_masks[peer]
            signed = values if peer > user else (q - values) % q
            acc[support] = (acc[support] + signed) % q
    return SparseMaskedGradient(
        user_id=user, locations=selected, values=acc[selected].copy()
    )


# ---------------------------------------------------------------------------
# server side


@dataclass
class ServerRoundState:
    """What the server accumulates while a round's messages arrive."""

    round_index: int
    d: int
    dropouts: FrozenSet[int]
    messages: Dict[int, SparseMaskedGradient] = dataclass_field(default_factory=dict)
    accumulator: np.ndarray = dataclass_field(default_factory=lambda: np.empty(0))


def server_aggregate(
    messages: Iterable[SparseMaskedGradient],
    cfg: ProtocolConfig,
    round_index: int,
    dropouts: FrozenSet[int],
) -> ServerRoundState:
    """Coordinate-wise field sum of the received messages."""
    q = np.uint64(cfg.modulus.q)
    state = ServerRoundState(
        round_index=round_index,
        d=cfg.d,
        dropouts=dropouts,
        accumulator=np.zeros(cfg.d, dtype=np.uint64),
    )
    for msg in messages:
        if msg.user_id in state.messages:
            raise DuplicateUser(f"second message from user {msg.user_id}")
        if msg.user_id in dropouts:
            raise ValueError(f"message from dropped user {msg.user_id}")
        state.messages[msg.user_id] = msg
        acc = state.accumulator
        acc[msg.locations] = (acc[msg.locations] + msg.values) % q
    return state


def recover_and_unmask(
    state: ServerRoundState,
    cohort: Cohort,
    pair_cache: Optional[PairCache] = None,
) -> np.ndarray:
    """Strip every surviving mask from the aggregated field vector.

    Needs at least floor(N/2)+1 survivors; shares are collected from the
    first threshold survivors by index.  Private masks are removed on each
    sender's transmitted support, pairwise masks of (dropped, surviving)
    pairs on the pair's binary support with the survivor's sign.

    Masks are re-derived from reconstructed seeds, not from client state.
    A simulator that already expanded this round's pairs for the client
    side can hand them in as pair_cache; the values are identical by
    construction, it only skips repeating the expansion work.  Private
    seeds are always reconstructed through the sharing.
    """
    cfg = cohort.cfg
    q = np.uint64(cfg.modulus.q)
    survivors = sorted(state.messages)
    if len(survivors) < cfg.reconstruction_threshold:
        raise TooManyDropouts(
            f"{len(survivors)} survivors, need {cfg.reconstruction_threshold}"
        )
    holders = survivors[: cfg.reconstruction_threshold]

    pairs = [
        (i, j, min(i, j), max(i, j))
        for i in sorted(state.dropouts)
        for j in survivors
    ]
    keys: List[SeedKey] = [(_KIND_PRIVATE, j) for j in survivors]
    for _, _, lo, hi in pairs:
        if pair_cache is None or (lo, hi) not in pair_cache:
            keys.append((_KIND_PAIR_ADDITIVE, lo, hi))
            keys.append((_KIND_PAIR_BINARY, lo, hi))
    seeds = dict(zip(keys, cohort.reconstruct_seeds(keys, holders)))

    acc = state.accumulator.copy()
    t, d = state.round_index, cfg.d
    for j in survivors:
        locs = state.messages[j].locations
        r_j = additive_mask_at(
            seeds[(_KIND_PRIVATE, j)], t, DomainTag.ADDITIVE_PRIVATE, d, locs, cfg.modulus
        )
        acc[locs] = (acc[locs] + (q - r_j) % q) % q
    for i, j, lo, hi in pairs:
        cached = None if pair_cache is None else pair_cache.get((lo, hi))
        if cached is None:
            cached = pair_masks(
                (seeds[(_KIND_PAIR_ADDITIVE, lo, hi)], seeds[(_KIND_PAIR_BINARY, lo, hi)]),
                (lo, hi),
                t,
                d,
                cfg.alpha,
                cfg.n,
                cfg.modulus,
            )
        support, values = cached
        signed = (q - values) % q if i > j else values
        acc[support] = (acc[support] + signed) % q
    return acc


# ---------------------------------------------------------------------------
# full rounds


@dataclass
class RoundTrace:
    """Everything a round produced, for analysis and for the training loop.

    aggregate/oracle are the dequantized real vectors; the oracle is the
    plaintext sum of the survivors' quantized gradients over their
    selection sets, i.e. what the protocol must reproduce exactly."""

    round_index: int
    mode: ProtocolMode
    dropouts: FrozenSet[int]
    survivors: Tuple[int, ...]
    bytes_per_user: Dict[int, int]
    selection_sizes: Dict[int, int]
    contributors_total: np.ndarray
    contributors_honest: np.ndarray
    aggregate_field: np.ndarray
    oracle_field: np.ndarray
    aggregate: np.ndarray
    oracle: np.ndarray
    matches_oracle: bool
    loss: Optional[float] = None
    gap_to_optimum: Optional[float] = None
    aborted_draws: int = 0


def _quantizer_uniforms(cohort: Cohort, i: int, round_index: int, d: int) -> np.ndarray:
    stream = PrgStream(cohort.private_seed(i), DomainTag.QUANTIZER, round_index)
    return uniform01_from_words(stream.words_at(0, d))


def _contributor_counts(
    messages: Dict[int, SparseMaskedGradient], d: int, adversaries: FrozenSet[int]
) -> Tuple[np.ndarray, np.ndarray]:
    all_locs = [m.locations for m in messages.values()]
    honest_locs = [m.locations for u, m in messages.items() if u not in adversaries]
    total = np.bincount(
        np.concatenate(all_locs) if all_locs else np.empty(0, dtype=np.int64), minlength=d
    )
    honest = np.bincount(
        np.concatenate(honest_locs) if honest_locs else np.empty(0, dtype=np.int64),
        minlength=d,
    )
    return total.astype(np.int64), honest.astype(np.int64)


def run_round(
    y: np.ndarray,
    cfg: ProtocolConfig,
    cohort: Cohort,
    round_index: int,
    dropouts: FrozenSet[int] = frozenset(),
    adversaries: FrozenSet[int] = frozenset(),
    server_reuses_masks: bool = False,
) -> RoundTrace:
    """One full aggregation round over raw gradients y of shape [n, d].

    Dropped users do no work at all; the server removes their footprint
    from the surviving masks after reconstruction.  The returned trace
    carries both the protocol output and the plaintext oracle so callers
    can hold the exactness invariant.

    By default the server re-derives every mask it removes from
    reconstructed seeds, which is the deployment-faithful path.  With
    server_reuses_masks the simulator hands the server the pair
    expansions already computed for the clients; the values are identical
    (expansion is deterministic in the seed), it only cuts the cost of
    simulating both sides of large cohorts in one process."""
    if y.shape != (cfg.n, cfg.d):
        raise ValueError(f"gradient matrix must be {(cfg.n, cfg.d)}, got {y.shape}")
    if any(not 0 <= i < cfg.n for i in dropouts):
        raise ValueError("dropout set contains an unknown user")
    if cfg.mode is ProtocolMode.BASELINE:
        return baseline_secagg_round(y, cfg, cohort, round_index, dropouts, adversaries)

    q = np.uint64(cfg.modulus.q)
    survivors = tuple(i for i in range(cfg.n) if i not in dropouts)
    if len(survivors) < cfg.reconstruction_threshold:
        raise TooManyDropouts(
            f"{len(survivors)} survivors, need {cfg.reconstruction_threshold}"
        )

    pair_seed_map = {}
    for i in survivors:
        for j, seeds in cohort.pair_seeds_for(i).items():
            pair_seed_map[(min(i, j), max(i, j))] = seeds
    pair_cache: PairCache = {}
    materialize_pair_masks(
        pair_seed_map, round_index, cfg.d, cfg.alpha, cfg.n, cfg.modulus, pair_cache
    )
    messages = []
    oracle_field = np.zeros(cfg.d, dtype=np.uint64)
    selection_sizes = {}
    for i in survivors:
        clipped = clip_gradient(y[i], cfg.clip_bound)
        u = _quantizer_uniforms(cohort, i, round_index, cfg.d)
        ybar = quantize_gradient(clipped, cfg.quantization_config(i), u, cfg.modulus)
        masks = build_mask_set(
            i,
            cohort.pair_seeds_for(i),
            cohort.private_seed(i),
            round_index,
            cfg.d,
            cfg.alpha,
            cfg.n,
            cfg.modulus,
            pair_cache,
        )
        messages.append(build_masked_gradient(ybar, masks, i, cfg.modulus))
        selected = masks.selection_set
        oracle_field[selected] = (oracle_field[selected] + ybar[selected]) % q
        selection_sizes[i] = len(selected)

    state = server_aggregate(messages, cfg, round_index, frozenset(dropouts))
    aggregate_field = recover_and_unmask(
        state, cohort, pair_cache if server_reuses_masks else None
    )
    total, honest = _contributor_counts(state.messages, cfg.d, frozenset(adversaries))
    return RoundTrace(
        round_index=round_index,
        mode=cfg.mode,
        dropouts=frozenset(dropouts),
        survivors=survivors,
        bytes_per_user={m.user_id: m.byte_size() for m in messages},
        selection_sizes=selection_sizes,
        contributors_total=total,
        contributors_honest=honest,
        aggregate_field=aggregate_field,
        oracle_field=oracle_field,
        aggregate=dequantize_aggregate(aggregate_field, cfg.c, cfg.modulus),
        oracle=dequantize_aggregate(oracle_field, cfg.c, cfg.modulus),
        matches_oracle=bool(np.array_equal(aggregate_field, oracle_field)),
    )


def baseline_secagg_round(
    y: np.ndarray,
    cfg: ProtocolConfig,
    cohort: Cohort,
    round_index: int,
    dropouts: FrozenSet[int] = frozenset(),
    adversaries: FrozenSet[int] = frozenset(),
) -> RoundTrace:
    """Dense reference round: no binary masks, every coordinate is sent.

    Messages carry d values (8 + 8d bytes) and the quantizer scale drops
    the 1/p factor, so this is classic masked aggregation with the same
    seeds and the same dropout recovery."""
    if cfg.mode is not ProtocolMode.BASELINE:
        raise ConfigError("mode", "baseline round requires a baseline-mode config")
    q = np.uint64(cfg.modulus.q)
    survivors = tuple(i for i in range(cfg.n) if i not in dropouts)
    if len(survivors) < cfg.reconstruction_threshold:
        raise TooManyDropouts(
            f"{len(survivors)} survivors, need {cfg.reconstruction_threshold}"
        )
    t, d = round_index, cfg.d

    pair_full: Dict[Tuple[int, int], np.ndarray] = {}

    def pair_mask_full(lo: int, hi: int, seeds) -> np.ndarray:
        if (lo, hi) not in pair_full:
            pair_full[(lo, hi)] = expand_additive_mask(
                seeds[0], t, DomainTag.ADDITIVE_PAIRWISE, d, cfg.modulus
            )
        return pair_full[(lo, hi)]

    messages = []
    oracle_field = np.zeros(d, dtype=np.uint64)
    for i in survivors:
        clipped = clip_gradient(y[i], cfg.clip_bound)
        u = _quantizer_uniforms(cohort, i, t, d)
        ybar = quantize_gradient(clipped, cfg.quantization_config(i), u, cfg.modulus)
        oracle_field = (oracle_field + ybar) % q
        priv = expand_additive_mask(
            cohort.private_seed(i), t, DomainTag.ADDITIVE_PRIVATE, d, cfg.modulus
        )
        acc = (ybar + priv) % q
        for j, seeds in sorted(cohort.pair_seeds_for(i).items()):
            r_ij = pair_mask_full(min(i, j), max(i, j), seeds)
            acc = (acc + (r_ij if j > i else (q - r_ij) % q)) % q
        messages.append(DenseMaskedGradient(user_id=i, values=acc))

    acc = np.zeros(d, dtype=np.uint64)
    seen = set()
    for msg in messages:
        if msg.user_id in seen:
            raise DuplicateUser(f"second message from user {msg.user_id}")
        seen.add(msg.user_id)
        acc = (acc + msg.values) % q

    holders = list(survivors[: cfg.reconstruction_threshold])
    keys: List[SeedKey] = [(_KIND_PRIVATE, j) for j in survivors]
    for i in sorted(dropouts):
        for j in survivors:
            keys.append((_KIND_PAIR_ADDITIVE, min(i, j), max(i, j)))
    seeds_by_key = dict(zip(keys, cohort.reconstruct_seeds(keys, holders)))
    for j in survivors:
        r_j = expand_additive_mask(
            seeds_by_key[(_KIND_PRIVATE, j)], t, DomainTag.ADDITIVE_PRIVATE, d, cfg.modulus
        )
        acc = (acc + (q - r_j) % q) % q
    for i in sorted(dropouts):
        for j in survivors:
            lo, hi = min(i, j), max(i, j)
            r_ij = expand_additive_mask(
                seeds_by_key[(_KIND_PAIR_ADDITIVE, lo, hi)],
                t,
                DomainTag.ADDITIVE_PAIRWISE,
                d,
                cfg.modulus,
            )
            acc = (acc + ((q - r_ij) % q if i > j else r_ij)) % q

    full = np.arange(d, dtype=np.int64)
    sparse_view = {
        m.user_id: SparseMaskedGradient(m.user_id, full, m.values) for m in messages
    }
    total, honest = _contributor_counts(sparse_view, d, frozenset(adversaries))
    return RoundTrace(
        round_index=t,
        mode=cfg.mode,
        dropouts=frozenset(dropouts),
        survivors=survivors,
        bytes_per_user={m.user_id: m.byte_size() for m in messages},
        selection_sizes={m.user_id: d for m in messages},
        contributors_total=total,
        contributors_honest=honest,
        aggregate_field=acc,
        oracle_field=oracle_field,
        aggregate=dequantize_aggregate(acc, cfg.c, cfg.modulus),
        oracle=dequantize_aggregate(oracle_field, cfg.c, cfg.modulus),
        matches_oracle=bool(np.array_equal(acc, oracle_field)),
    )
