"""Closed-form guarantees: selection moments, contributor predictions, the
variance and convergence bounds, and the trace reports."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsesecagg.analysis import (
    CompressionReport,
    ContributorReport,
    ConvergenceParams,
    PrivacyParams,
    compression_report,
    contributor_report,
    convergence_bound,
    convergence_bound_exact,
    expected_contributors,
    p_prime,
    p_prime_exact,
    p_tilde,
    p_tilde_exact,
    privacy_guarantee,
    selection_probability_exact,
    update_variance_bound,
)
from sparsesecagg.errors import ConfigError
from sparsesecagg.masking import selection_probability
from sparsesecagg.protocol import ProtocolConfig, run_round, setup_cohort


def default_cp(**kw):
    base = dict(
        mu=1.0,
        ell=10.0,
        local_steps=5,
        rounds=1,
        grad_bound=1.0,
        sigma_sq=(0.0,) * 8,
        heterogeneity=0.0,
        c=2**10,
        n=8,
        d=64,
        alpha=0.3,
        theta=0.2,
        betas=(0.125,) * 8,
    )
    base.update(kw)
    return ConvergenceParams(**base)


# ---- selection moments ----


def test_selection_probability_pinned_values():
    assert selection_probability(0.1, 50) == pytest.approx(0.0952550334015142, rel=1e-13)
    assert float(selection_probability_exact(0.1, 50)) == pytest.approx(
        selection_probability(0.1, 50), rel=1e-12
    )
    # cap: every pair bit fires
    assert selection_probability(1.0, 2) == 1.0


def test_p_prime_and_tilde_pinned_values():
    assert p_prime(0.1, 50, 0.1) == pytest.approx(0.9 * 0.0952550334015142, rel=1e-12)
    assert p_tilde(0.1, 11, 0.0) == pytest.approx(0.01740447381797776, rel=1e-12)


def test_p_tilde_from_first_principles():
    # the joint selection event by inclusion-exclusion: both users miss a
    # coordinate only if the shared bit and both private sets of n-2 other
    # bits all stay clear, hence the exponent 2n-3
    for alpha, n, theta in [(0.3, 8, 0.0), (0.5, 20, 0.1), (1.0, 2, 0.3)]:
        a = Fraction(alpha) / (n - 1)
        miss = (1 - a) ** (n - 1)
        both_miss = (1 - a) ** (2 * n - 3)
        joint = (1 - Fraction(theta)) ** 2 * (1 - 2 * miss + both_miss)
        assert p_tilde(alpha, n, theta) == pytest.approx(float(joint), rel=1e-12)


@given(
    alpha=st.floats(0.05, 1.0),
    n=st.integers(2, 60),
    theta=st.floats(0.0, 0.49),
)
@settings(max_examples=100, deadline=None)
def test_p_tilde_dominates_p_prime_squared(alpha, n, theta):
    # shared pair bits correlate the two selections positively
    assert p_tilde(alpha, n, theta) >= p_prime(alpha, n, theta) ** 2 * (1 - 1e-12)


def test_p_tilde_equals_square_only_when_independent():
    # at alpha = n-1 both users select everything: p~ = p'^2 exactly
    assert p_tilde_exact(1.0, 2, 0.2) == p_prime_exact(1.0, 2, 0.2) ** 2


def test_selection_probability_monotonic():
    grid = [selection_probability(a, 10) for a in (0.1, 0.3, 0.5, 0.9)]
    assert all(x < y for x, y in zip(grid, grid[1:]))
    # p decreases toward 1 - e^{-alpha} as the cohort grows
    by_n = [selection_probability(0.3, n) for n in (2, 5, 20, 100, 1000)]
    assert all(x > y for x, y in zip(by_n, by_n[1:]))
    assert by_n[-1] == pytest.approx(1 - math.exp(-0.3), rel=1e-3)


# ---- privacy guarantee ----


def test_privacy_guarantee_pinned():
    pp = PrivacyParams(alpha=0.5, theta=0.1, gamma=0.2, n=100)
    t_exact = privacy_guarantee(pp).exact
    assert t_exact == pytest.approx(28.3297925006904, rel=1e-12)
    assert t_exact == pytest.approx((1 - math.exp(-0.5)) * 0.9 * 0.8 * 100, rel=1e-12)
    assert privacy_guarantee(pp).small_alpha == pytest.approx(0.5 * 0.9 * 0.8 * 100)


def test_expected_contributors_pinned():
    pp = PrivacyParams(alpha=0.5, theta=0.1, gamma=0.2, n=200)
    assert pp.honest == 160
    assert expected_contributors(pp) == pytest.approx(56.71452185608163, rel=1e-12)


def test_prediction_approaches_asymptote():
    gaps = []
    for k in range(4):
        n = 100 * 2**k
        pp = PrivacyParams(alpha=0.5, theta=0.1, gamma=0.2, n=n)
        gaps.append(abs(expected_contributors(pp) / privacy_guarantee(pp).exact - 1.0))
    assert all(x > y for x, y in zip(gaps, gaps[1:]))


def test_privacy_params_validation():
    for kw, field in [
        (dict(alpha=0.5, theta=0.6, gamma=0.0, n=10), "theta"),
        (dict(alpha=0.5, theta=0.0, gamma=0.5, n=10), "gamma"),
        (dict(alpha=0.0, theta=0.0, gamma=0.0, n=10), "alpha"),
        (dict(alpha=10.0, theta=0.0, gamma=0.0, n=10), "alpha"),
        (dict(alpha=0.5, theta=0.0, gamma=0.0, n=1), "n"),
    ]:
        with pytest.raises(ConfigError) as err:
            PrivacyParams(**kw)
        assert err.value.field == field


# ---- variance and convergence bounds ----


def test_update_variance_bound_pinned():
    assert update_variance_bound(default_cp(), 4) == pytest.approx(
        0.04373315406632423, rel=1e-12
    )


def test_update_variance_bound_structure():
    cp = default_cp()
    p_pr = p_prime(cp.alpha, cp.n, cp.theta)
    p_ti = p_tilde(cp.alpha, cp.n, cp.theta)
    s2 = sum(b * b for b in cp.betas)
    sel = (1 / p_pr - 1) * s2 + (p_ti / p_pr**2 - 1) * (1 - s2)
    quant = cp.n * cp.d * p_pr / (4 * cp.c**2)
    expect = quant + 4 * cp.eta(4) ** 2 * cp.local_steps**2 * cp.grad_bound**2 * sel
    assert update_variance_bound(cp, 4) == pytest.approx(expect, rel=1e-12)
    # quantization noise vanishes as c grows; selection noise stays
    assert update_variance_bound(default_cp(c=2**30), 4) == pytest.approx(
        expect - quant, rel=1e-6
    )


def test_convergence_bound_matches_exact_arithmetic():
    for t in (0, 4, 100):
        for cp in (
            default_cp(),
            default_cp(rounds=500, sigma_sq=(0.5,) * 8, heterogeneity=2.0, w0_distance=3.0),
        ):
            cb = convergence_bound(cp, t)
            exact = float(convergence_bound_exact(cp, t))
            assert cb.bound == pytest.approx(exact, rel=1e-12)


def test_convergence_bound_terms():
    cp = default_cp(sigma_sq=(1.0,) * 8, heterogeneity=0.5)
    cb = convergence_bound(cp, 4)
    g, e = cp.grad_bound, cp.local_steps
    assert cb.b_term == pytest.approx(
        sum(b * b for b in cp.betas) + 6 * cp.ell * 0.5 + 8 * (e - 1) ** 2 * g * g
    )
    assert cb.eta == pytest.approx(cp.eta(4))
    # the bound decays like 1/t_end in the horizon
    short = convergence_bound(default_cp(rounds=10), 4).bound
    long = convergence_bound(default_cp(rounds=1000), 4).bound
    assert long < short / 10


def test_convergence_params_validation():
    with pytest.raises(ConfigError):
        default_cp(mu=2.0, ell=1.0)
    with pytest.raises(ConfigError):
        default_cp(sigma_sq=(0.0,) * 3)
    with pytest.raises(ConfigError):
        default_cp(betas=(0.5,) * 8)
    with pytest.raises(ConfigError):
        default_cp(grad_bound=-1.0)
    with pytest.raises(ConfigError):
        default_cp(theta=0.5)


# ---- reports on real traces ----


@pytest.fixture(scope="module")
def small_traces():
    cfg = ProtocolConfig(n=6, d=256, alpha=0.4, theta=0.2, gamma=0.2, c=2**8, clip_bound=1.0)
    cohort = setup_cohort(cfg, master_seed=21)
    rng = np.random.default_rng(21)
    traces = []
    for t in range(4):
        y = rng.uniform(-1, 1, size=(cfg.n, cfg.d))
        dropouts = frozenset({t % cfg.n}) if t % 2 else frozenset()
        traces.append(
            run_round(y, cfg, cohort, t, dropouts=dropouts, adversaries=frozenset({5}))
        )
    return cfg, traces


def test_contributor_report_counts(small_traces):
    cfg, traces = small_traces
    pp = PrivacyParams(alpha=cfg.alpha, theta=cfg.theta, gamma=cfg.gamma, n=cfg.n)
    report = contributor_report(traces, pp)
    assert isinstance(report, ContributorReport)
    assert report.rounds == len(traces)
    # recount one round by hand
    revealed = traces[0].contributors_total > 0
    honest0 = traces[0].contributors_honest[revealed]
    assert report.histogram[0] == report.floor_violations
    assert sum(report.histogram) == report.revealed
    assert report.min_honest == 0 or report.floor_violations == 0
    assert report.prediction == pytest.approx(expected_contributors(pp))
    assert any(line.startswith("mean honest contributors") for line in report.lines())
    assert honest0.size <= report.revealed


def test_contributor_report_needs_traces():
    pp = PrivacyParams(alpha=0.4, theta=0.0, gamma=0.0, n=6)
    with pytest.raises(ValueError):
        contributor_report([], pp)


def test_compression_report_ratios(small_traces):
    cfg, traces = small_traces
    report = compression_report(traces, cfg.alpha, cfg.n)
    assert isinstance(report, CompressionReport)
    sizes = [s / cfg.d for tr in traces for s in tr.selection_sizes.values()]
    assert report.mean_ratio == pytest.approx(float(np.mean(sizes)))
    assert report.min_ratio <= report.mean_ratio <= report.max_ratio
    assert report.p == pytest.approx(selection_probability(cfg.alpha, cfg.n))
    assert report.gap_to_p == pytest.approx(abs(report.mean_ratio - report.p) / report.p)
    assert any("|p - alpha|" in line for line in report.lines())
