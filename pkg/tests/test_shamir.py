"""Sharing and reconstruction, on both the scalar any-prime path and the
batched sub-2^32 path, plus the brute-force hiding argument over a toy
field that the protocol's threshold guarantee reduces to."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsesecagg.errors import DegreeTooLarge, InconsistentShares, InsufficientShares
from sparsesecagg.field import DEFAULT_MODULUS, FieldModulus
from sparsesecagg.prg import DomainTag, PrgStream, Seed
from sparsesecagg.shamir import (
    Share,
    deal_shares_batch,
    evaluate_polynomials,
    lagrange_at_zero,
    limbs_to_seed,
    reconstruct_batch,
    reconstruct_limbs,
    reconstruct_seed,
    seed_to_limbs,
    share_limbs,
    share_seed,
    stream_coefficients,
    vandermonde,
)

Q257 = FieldModulus(257)


def fresh_words(tag=0):
    return PrgStream(Seed(bytes([tag]) * 32), DomainTag.DEALING, 0).words()


def test_limb_packing_roundtrip():
    seed = Seed(bytes(range(32)))
    limbs = seed_to_limbs(seed)
    assert len(limbs) == 16 and all(0 <= v < 2**16 for v in limbs)
    assert limbs_to_seed(limbs) == seed
    limbs8 = seed_to_limbs(seed, limb_bits=8)
    assert len(limbs8) == 32
    assert limbs_to_seed(limbs8, limb_bits=8) == seed
    with pytest.raises(ValueError):
        seed_to_limbs(seed, limb_bits=12)


@given(st.integers(min_value=0, max_value=2**32))
@settings(max_examples=25, deadline=None)
def test_share_reconstruct_roundtrip(seed_int):
    seed = Seed(seed_int.to_bytes(32, "little"))
    shares = share_seed(seed, n=7, degree=3, coeff_words=fresh_words(), modulus=DEFAULT_MODULUS)
    assert reconstruct_seed(shares[:4], 3, DEFAULT_MODULUS) == seed
    assert reconstruct_seed(shares[2:6], 3, DEFAULT_MODULUS) == seed
    assert reconstruct_seed(shares, 3, DEFAULT_MODULUS) == seed  # extras verified


def test_insufficient_and_duplicate_shares():
    limbs = [5, 250]
    shares = share_limbs(limbs, n=5, degree=2, coeff_words=fresh_words(), modulus=Q257)
    with pytest.raises(InsufficientShares):
        reconstruct_limbs(shares[:2], 2, Q257)
    # the same share twice does not count as two holders
    with pytest.raises(InsufficientShares):
        reconstruct_limbs([shares[0], shares[0], shares[1]], 2, Q257)
    assert reconstruct_limbs(shares[:3], 2, Q257) == limbs


def test_corrupt_extra_share_detected():
    shares = share_limbs([42], n=5, degree=2, coeff_words=fresh_words(), modulus=Q257)
    bad = Share(shares[4].holder_index, ((shares[4].chunk_values[0] + 1) % 257,))
    with pytest.raises(InconsistentShares):
        reconstruct_limbs(shares[:3] + [bad], 2, Q257)
    with pytest.raises(InconsistentShares):
        reconstruct_limbs([shares[0], bad, Share(bad.holder_index, (0,))], 2, Q257)


def test_degree_must_leave_enough_shares():
    with pytest.raises(DegreeTooLarge):
        share_limbs([1], n=3, degree=3, coeff_words=fresh_words(), modulus=Q257)


def test_share_wire_roundtrip():
    s = Share(9, (1, 2**31 - 2, 65535))
    assert Share.from_bytes(s.to_bytes()) == s
    with pytest.raises(ValueError):
        Share.from_bytes(s.to_bytes()[:-1])


def test_big_modulus_scalar_path():
    q = FieldModulus(2**61 - 1)
    seed = Seed(bytes(reversed(range(32))))
    shares = share_seed(seed, n=6, degree=3, coeff_words=fresh_words(1), modulus=q)
    assert reconstruct_seed(shares[1:5], 3, q) == seed


def test_lagrange_weights_sum_to_one():
    # interpolating the constant polynomial recovers the constant
    lam = lagrange_at_zero([1, 3, 4, 7], DEFAULT_MODULUS)
    assert sum(lam) % DEFAULT_MODULUS.q == 1


# ---- batched path versus scalar path ----


def test_batch_dealing_matches_scalar():
    seed = Seed(bytes(range(32)))
    limbs = seed_to_limbs(seed)
    n, degree = 9, 4
    scalar = share_limbs(limbs, n, degree, fresh_words(2), DEFAULT_MODULUS)

    stream = PrgStream(Seed(bytes([2]) * 32), DomainTag.DEALING, 0)
    coeffs = np.empty((degree + 1, len(limbs)), dtype=np.uint64)
    coeffs[0] = limbs
    coeffs[1:] = stream_coefficients(stream, degree, len(limbs), DEFAULT_MODULUS).T
    table = evaluate_polynomials(coeffs, range(1, n + 1), DEFAULT_MODULUS)
    for h in range(n):
        assert tuple(int(v) for v in table[h]) == scalar[h].chunk_values


def test_deal_shares_batch_reconstructs():
    rng = np.random.default_rng(5)
    limbs = rng.integers(0, 2**16, size=300, dtype=np.uint64)
    calls = []

    def fill(m):
        calls.append(m)
        return rng.integers(0, DEFAULT_MODULUS.q, size=m, dtype=np.uint64)

    table = deal_shares_batch(limbs, n=7, degree=3, coeff_fill=fill, modulus=DEFAULT_MODULUS)
    assert table.shape == (300, 7) and calls == [900]
    holders = [2, 4, 5, 7]  # share points, 1-based
    rows = table[:, [h - 1 for h in holders]]
    np.testing.assert_array_equal(
        reconstruct_batch(rows, holders, DEFAULT_MODULUS), limbs
    )


def test_vandermonde():
    v = vandermonde([1, 2, 3], 3, Q257)
    np.testing.assert_array_equal(v, [[1, 1, 1], [1, 2, 4], [1, 3, 9]])


# ---- hiding at toy scale ----


def _poly_through(points, q):
    """Coefficients of the unique degree-(k-1) polynomial through k points,
    solved by modular Gaussian elimination so the count argument below
    does not depend on the library's own Lagrange code."""
    k = len(points)
    a = [[pow(x, e, q) for e in range(k)] + [y % q] for x, y in points]
    for col in range(k):
        piv = next(r for r in range(col, k) if a[r][col] % q != 0)
        a[col], a[piv] = a[piv], a[col]
        inv = pow(a[col][col], q - 2, q)
        a[col] = [v * inv % q for v in a[col]]
        for r in range(k):
            if r != col and a[r][col]:
                f = a[r][col]
                a[r] = [(vr - f * vc) % q for vr, vc in zip(a[r], a[col])]
    return [a[r][k] for r in range(k)]


def test_three_shares_hide_everything_and_four_reconstruct():
    # q=257, n=6, degree=3: every 3-subset of shares is consistent with
    # every candidate secret via exactly one polynomial, and every
    # 4-subset pins the dealt secret
    q = 257
    secret = 201
    shares = share_limbs([secret], n=6, degree=3, coeff_words=fresh_words(3), modulus=Q257)
    points = [(s.holder_index, s.chunk_values[0]) for s in shares]

    for triple in itertools.combinations(points, 3):
        consistent = {}
        for candidate in range(q):
            coeffs = _poly_through(list(triple) + [(0, candidate)], q)
            assert len(coeffs) == 4  # degree <= 3, a valid dealing
            for x, y in triple:  # really passes through the shares
                assert sum(c * pow(x, e, q) for e, c in enumerate(coeffs)) % q == y
            assert coeffs[0] == candidate
            consistent[candidate] = tuple(coeffs)
        # exactly one polynomial per candidate, all distinct: the triple
        # carries no information about the secret
        assert len(consistent) == q
        assert len(set(consistent.values())) == q

    for quad in itertools.combinations(range(6), 4):
        got = reconstruct_limbs([shares[i] for i in quad], 3, Q257)
        assert got == [secret]
