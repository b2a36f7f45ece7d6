import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsesecagg.errors import ConfigError, OverflowBudgetViolation
from sparsesecagg.field import DEFAULT_MODULUS, FieldModulus
from sparsesecagg.quantize import (
    QuantizationConfig,
    check_overflow_budget,
    clip_gradient,
    dequantize_aggregate,
    quantize_gradient,
    round_numerators,
    stochastic_round,
    uniform01_from_words,
)


def make_cfg(**kw):
    args = dict(c=2**10, beta=0.1, p=0.3, theta=0.1, clip_bound=1.0)
    args.update(kw)
    return QuantizationConfig(**args)


def test_scale_formula():
    cfg = make_cfg()
    assert cfg.scale == pytest.approx(0.1 / (0.3 * 0.9))


@pytest.mark.parametrize(
    "field,value",
    [("c", 0), ("c", 1.5), ("beta", 0.0), ("beta", 1.1), ("p", 0.0), ("p", 1.2),
     ("theta", 0.5), ("theta", -0.1), ("clip_bound", 0.0)],
)
def test_config_validation(field, value):
    with pytest.raises(ConfigError) as err:
        make_cfg(**{field: value})
    assert err.value.field == field


def test_stochastic_round_is_exactly_unbiased():
    # E[round(z)] over uniform u is z itself: the up-round happens with
    # probability frac(c z), contributing exactly the missing mass
    for z in (0.0, 0.3, -0.47, 0.9999, -1.5):
        c = 8
        cz = c * z
        frac = cz - math.floor(cz)
        lo = Fraction(math.floor(cz), c)
        expectation = lo * Fraction(1) if frac == 0 else (
            lo * (1 - Fraction(frac)) + (lo + Fraction(1, c)) * Fraction(frac)
        )
        assert float(expectation) == pytest.approx(z, abs=1e-12)
        assert stochastic_round(z, c, u=frac + 1e-9 if frac < 1 else 1) == lo
        if frac:
            assert stochastic_round(z, c, u=frac - 1e-9) == lo + Fraction(1, c)


@given(
    st.lists(st.floats(min_value=-4, max_value=4, allow_nan=False), min_size=1, max_size=20),
    st.integers(min_value=1, max_value=2**16),
    st.integers(min_value=0, max_value=2**32),
)
def test_round_numerators_matches_scalar(zs, c, seed):
    rng = np.random.default_rng(seed)
    z = np.array(zs)
    u = rng.random(z.shape)
    vec = round_numerators(z, c, u)
    for k in range(z.size):
        assert vec[k] == stochastic_round(float(z[k]), c, float(u[k])) * c


def test_round_numerators_unbiased_monte_carlo():
    rng = np.random.default_rng(7)
    z = np.array([0.123, -0.77, 0.5, 0.999])
    c = 64
    trials = 20000
    acc = np.zeros_like(z)
    for _ in range(trials):
        acc += round_numerators(z, c, rng.random(z.shape))
    mean = acc / trials / c
    se = 1.0 / (c * math.sqrt(trials))  # rounding noise is at most 1/c per draw
    np.testing.assert_allclose(mean, z, atol=5 * se)


def test_clip():
    y = np.array([-3.0, -0.5, 0.2, 9.0])
    np.testing.assert_array_equal(clip_gradient(y, 1.0), [-1.0, -0.5, 0.2, 1.0])


def test_quantize_rejects_unclipped_input():
    cfg = make_cfg()
    u = np.zeros(3)
    with pytest.raises(OverflowBudgetViolation):
        quantize_gradient(np.array([0.0, 2.0, 0.0]), cfg, u, DEFAULT_MODULUS)


def test_quantize_dequantize_single_user():
    cfg = make_cfg(c=2**12)
    rng = np.random.default_rng(3)
    y = rng.uniform(-1, 1, size=50)
    u = rng.random(50)
    field_vec = quantize_gradient(y, cfg, u, DEFAULT_MODULUS)
    assert field_vec.dtype == np.uint64
    back = dequantize_aggregate(field_vec, cfg.c, DEFAULT_MODULUS)
    # one user, so the decoded value is scale*y rounded onto the 1/c lattice
    np.testing.assert_allclose(back, cfg.scale * y, atol=1.0 / cfg.c)


def test_negative_values_embed_into_upper_half():
    cfg = make_cfg()
    u = np.full(1, 0.999999)  # never round up
    out = quantize_gradient(np.array([-1.0]), cfg, u, DEFAULT_MODULUS)
    assert int(out[0]) > DEFAULT_MODULUS.max_magnitude


def test_uniform01_from_words_range_and_precision():
    words = np.array([0, 2**64 - 1, 2**11], dtype=np.uint64)
    u = uniform01_from_words(words)
    assert u[0] == 0.0
    assert 0.0 <= u.min() and u.max() < 1.0
    assert u[2] == 2.0**-53


def test_overflow_budget():
    margin = check_overflow_budget(
        n=8, c=2**10, beta_max=0.125, clip_bound=1.0, p=0.3, theta=0.2, modulus=DEFAULT_MODULUS
    )
    assert margin > 0
    with pytest.raises(OverflowBudgetViolation):
        check_overflow_budget(
            n=8, c=2**10, beta_max=0.125, clip_bound=1.0, p=0.3, theta=0.2,
            modulus=FieldModulus(257),
        )
