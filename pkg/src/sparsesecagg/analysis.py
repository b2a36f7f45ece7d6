"""Closed-form evaluators for the protocol's guarantees and reports that
compare them with empirical round traces.

Everything is finite-N: selection enters through
p = 1 - (1 - alpha/(N-1))^(N-1) and its survival-adjusted variants

    p'      = (1 - theta) * p
    p~      = (1-theta)^2 * (1 - 2(1-a)^(N-1) + (1-a)^(2N-3)),  a = alpha/(N-1)

rather than the large-N limit 1 - e^{-alpha}, so desk-scale cohorts are
checked against their exact expectation and the asymptote is reported
alongside instead of silently substituted.

The rational quantities (p, p', p~, the variance and convergence bounds)
also have exact Fraction twins, used to cross-check the float pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError
from .masking import selection_probability
from .protocol import RoundTrace

Number = Union[float, Fraction]


def _as_fraction(x: float) -> Fraction:
    """Exact rational value of a float (no decimal rounding)."""
    return Fraction(x)


# ---------------------------------------------------------------------------
# privacy guarantee


@dataclass(frozen=True)
class PrivacyParams:
    """Inputs of the contributor-count guarantee: sparsity level alpha,
    dropout rate theta, adversarial fraction gamma, cohort size n."""

    alpha: float
    theta: float
    gamma: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ConfigError("n", f"cohort size must be at least 2, got {self.n}")
        if not 0.0 < self.alpha <= self.n - 1:
            raise ConfigError(
                "alpha", f"must be in (0, {self.n - 1}], got {self.alpha}"
            )
        for name in ("theta", "gamma"):
            value = getattr(self, name)
            if not 0.0 <= value < 0.5:
                raise ConfigError(name, f"must be in [0, 0.5), got {value}")

    @property
    def honest(self) -> int:
        """Honest cohort size with the adversary count rounded down to a
        whole number of users, which is what a simulation can label."""
        return self.n - math.floor(self.gamma * self.n)


@dataclass(frozen=True)
class PrivacyGuarantee:
    """T in its exact form and the small-alpha approximation that the
    guarantee approaches when alpha is far below 1."""

    exact: float
    small_alpha: float


def privacy_guarantee(pp: PrivacyParams) -> PrivacyGuarantee:
    """Expected honest surviving contributors per revealed coordinate,
    in the large-N limit: T = (1 - e^{-alpha})(1 - theta)(1 - gamma) N."""
    base = (1.0 - pp.theta) * (1.0 - pp.gamma) * pp.n
    return PrivacyGuarantee(
        exact=(1.0 - math.exp(-pp.alpha)) * base,
        small_alpha=pp.alpha * base,
    )


def expected_contributors(pp: PrivacyParams) -> float:
    """Finite-N expectation of the same count: p(1-theta) per honest user,
    with the adversary count rounded to whole users as in `honest`."""
    p = selection_probability(pp.alpha, pp.n)
    return p * (1.0 - pp.theta) * pp.honest


# ---------------------------------------------------------------------------
# selection moments


def p_prime(alpha: float, n: int, theta: float) -> float:
    """Probability that a user selects a fixed coordinate and survives."""
    return (1.0 - theta) * selection_probability(alpha, n)


def p_tilde(alpha: float, n: int, theta: float) -> float:
    """Joint probability that two fixed users both select a coordinate and
    both survive.  The shared pair bit correlates the two selections, so
    p~ >= p'^2 always; that inequality is asserted because the variance
    bound's cross term (p~/p'^2 - 1) would otherwise go negative."""
    tilde = float(p_tilde_exact(alpha, n, theta))
    square = p_prime(alpha, n, theta) ** 2
    if square > tilde * (1.0 + 1e-12):
        raise AssertionError(f"p'^2 = {square} exceeds p~ = {tilde}")
    return tilde


def selection_probability_exact(alpha: float, n: int) -> Fraction:
    if n < 2:
        raise ValueError(f"cohort size must be at least 2, got {n}")
    a = _as_fraction(alpha) / (n - 1)
    if not 0 < a <= 1:
        raise ValueError(f"alpha must be in (0, {n - 1}], got {alpha}")
    return 1 - (1 - a) ** (n - 1)


def p_prime_exact(alpha: float, n: int, theta: float) -> Fraction:
    return (1 - _as_fraction(theta)) * selection_probability_exact(alpha, n)


def p_tilde_exact(alpha: float, n: int, theta: float) -> Fraction:
    a = _as_fraction(alpha) / (n - 1)
    survive = (1 - _as_fraction(theta)) ** 2
    return survive * (1 - 2 * (1 - a) ** (n - 1) + (1 - a) ** (2 * n - 3))


# ---------------------------------------------------------------------------
# convergence and variance bounds


@dataclass(frozen=True)
class ConvergenceParams:
    """Everything the convergence bound consumes.

    sigma_sq holds the per-user stochastic-gradient variances sigma_i^2,
    heterogeneity is the F* gap (Gamma), grad_bound is the uniform bound G
    on stochastic gradient norms (the protocol's clip bound qualifies),
    and w0_distance is ||w^(0) - w*||, stored unsquared.
    """

    mu: float
    ell: float
    local_steps: int
    rounds: int
    grad_bound: float
    sigma_sq: Tuple[float, ...]
    heterogeneity: float
    c: int
    n: int
    d: int
    alpha: float
    theta: float
    betas: Tuple[float, ...]
    w0_distance: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.mu <= self.ell:
            raise ConfigError("mu", f"need 0 < mu <= ell, got {self.mu}, {self.ell}")
        if self.local_steps < 1:
            raise ConfigError("local_steps", f"must be >= 1, got {self.local_steps}")
        if self.rounds < 1:
            raise ConfigError("rounds", f"must be >= 1, got {self.rounds}")
        if self.grad_bound < 0 or self.heterogeneity < 0 or self.w0_distance < 0:
            raise ConfigError("grad_bound", "norm bounds cannot be negative")
        if self.c < 1:
            raise ConfigError("c", f"quantization level must be >= 1, got {self.c}")
        if self.n < 2:
            raise ConfigError("n", f"cohort size must be at least 2, got {self.n}")
        if self.d < 1:
            raise ConfigError("d", f"dimension must be >= 1, got {self.d}")
        if not 0.0 < self.alpha <= self.n - 1:
            raise ConfigError("alpha", f"must be in (0, {self.n - 1}], got {self.alpha}")
        if not 0.0 <= self.theta < 0.5:
            raise ConfigError("theta", f"must be in [0, 0.5), got {self.theta}")
        if len(self.sigma_sq) != self.n or any(s < 0 for s in self.sigma_sq):
            raise ConfigError("sigma_sq", "need one nonnegative variance per user")
        if len(self.betas) != self.n or any(b < 0 for b in self.betas):
            raise ConfigError("betas", "need one nonnegative weight per user")
        if abs(sum(self.betas) - 1.0) > 1e-9:
            raise ConfigError("betas", f"weights sum to {sum(self.betas)}, not 1")

    @property
    def nu(self) -> float:
        return max(8.0 * self.ell / self.mu, float(self.local_steps))

    def eta(self, t: int) -> float:
        """Step size at global step t: 2 / (mu (nu + t))."""
        return 2.0 / (self.mu * (self.nu + t))


@dataclass(frozen=True)
class ConvergenceBound:
    """The two noise aggregates and the resulting optimality-gap bound.

    b_term collects gradient noise and heterogeneity, c_term the
    quantization and sparse-selection noise evaluated at one global step
    (it carries a 1/eta(t)^2 factor, so the step matters), and bound is

        (2 ell / mu) / (nu + t_end) * ((b_term + c_term)/mu
                                        + 2 ell w0_distance^2)

    evaluated at t_end = rounds * local_steps.
    """

    b_term: float
    c_term: float
    bound: float
    step: int
    eta: float


def _selection_noise_factor(p_pr: Number, p_ti: Number, betas: Sequence[Number]) -> Number:
    """sum_i beta_i^2 (1/p' - 1) + sum_{i != j} beta_i beta_j (p~/p'^2 - 1),
    simplified through sum beta_i = 1."""
    s2 = sum(b * b for b in betas)
    return (1 / p_pr - 1) * s2 + (p_ti / (p_pr * p_pr) - 1) * (1 - s2)


def convergence_bound(cp: ConvergenceParams, t: int) -> ConvergenceBound:
    """Evaluate the optimality-gap bound with the noise term C taken at
    global step t.  C is step-dependent because the quantization noise is
    expressed relative to the shrinking step size; reports evaluate it at
    the synchronization points they describe."""
    e, g = cp.local_steps, cp.grad_bound
    b_term = (
        sum(b * b * s for b, s in zip(cp.betas, cp.sigma_sq))
        + 6.0 * cp.ell * cp.heterogeneity
        + 8.0 * (e - 1) ** 2 * g * g
    )
    p_pr = p_prime(cp.alpha, cp.n, cp.theta)
    p_ti = p_tilde(cp.alpha, cp.n, cp.theta)
    eta = cp.eta(t)
    c_term = (1.0 / eta**2) * cp.n * cp.d * p_pr / (4.0 * cp.c**2) + (
        4.0 * e**2 * g * g * _selection_noise_factor(p_pr, p_ti, cp.betas)
    )
    t_end = cp.rounds * cp.local_steps
    bound = (2.0 * cp.ell / cp.mu / (cp.nu + t_end)) * (
        (b_term + c_term) / cp.mu + 2.0 * cp.ell * cp.w0_distance**2
    )
    return ConvergenceBound(b_term=b_term, c_term=c_term, bound=bound, step=t, eta=eta)


def convergence_bound_exact(cp: ConvergenceParams, t: int) -> Fraction:
    """The same bound in exact rational arithmetic, for cross-checking the
    float evaluation.  Every input is rational, so the result is exact."""
    mu, ell = _as_fraction(cp.mu), _as_fraction(cp.ell)
    g = _as_fraction(cp.grad_bound)
    e = cp.local_steps
    betas = [_as_fraction(b) for b in cp.betas]
    b_term = (
        sum(b * b * _as_fraction(s) for b, s in zip(betas, cp.sigma_sq))
        + 6 * ell * _as_fraction(cp.heterogeneity)
        + 8 * (e - 1) ** 2 * g * g
    )
    p_pr = p_prime_exact(cp.alpha, cp.n, cp.theta)
    p_ti = p_tilde_exact(cp.alpha, cp.n, cp.theta)
    nu = _as_fraction(cp.nu)
    eta = 2 / (mu * (nu + t))
    c_term = (1 / eta**2) * cp.n * cp.d * p_pr / (4 * cp.c**2) + (
        4 * e**2 * g * g * _selection_noise_factor(p_pr, p_ti, betas)
    )
    t_end = cp.rounds * cp.local_steps
    dist = _as_fraction(cp.w0_distance)
    return (2 * ell / mu / (nu + t_end)) * ((b_term + c_term) / mu + 2 * ell * dist * dist)


def update_variance_bound(cp: ConvergenceParams, t: int) -> float:
    """Bound on E||w_bar - v_bar||^2 for the synchronization whose last
    local step runs at global step t: quantization noise N d p'/(4c^2)
    plus selection noise 4 eta(t)^2 E^2 G^2 times the weight factor."""
    p_pr = p_prime(cp.alpha, cp.n, cp.theta)
    p_ti = p_tilde(cp.alpha, cp.n, cp.theta)
    eta = cp.eta(t)
    return cp.n * cp.d * p_pr / (4.0 * cp.c**2) + 4.0 * eta**2 * (
        cp.local_steps**2
        * cp.grad_bound**2
        * _selection_noise_factor(p_pr, p_ti, cp.betas)
    )


# ---------------------------------------------------------------------------
# trace reports


@dataclass(frozen=True)
class ContributorReport:
    """Honest-contributor statistics over revealed coordinates, next to
    the finite-N prediction and the asymptotic guarantee."""

    rounds: int
    revealed: int
    mean_honest: float
    min_honest: int
    histogram: Tuple[int, ...]
    prediction: float
    asymptote: float
    relative_gap: float
    floor_violations: int

    def lines(self) -> List[str]:
        status = (
            "held"
            if self.floor_violations == 0
            else f"VIOLATED on {self.floor_violations} coordinate(s)"
        )
        return [
            f"rounds analyzed:            {self.rounds}",
            f"revealed coordinates:       {self.revealed}",
            f"mean honest contributors:   {self.mean_honest:.4f}",
            f"finite-N prediction:        {self.prediction:.4f}",
            f"relative gap:               {self.relative_gap * 100:.3f}%",
            f"asymptotic T:               {self.asymptote:.4f}",
            f"min honest contributors:    {self.min_honest}",
            f"privacy floor (> 0 honest): {status}",
        ]


def contributor_report(traces: Sequence[RoundTrace], pp: PrivacyParams) -> ContributorReport:
    """Compare per-coordinate honest contributor counts against
    p(1-theta)(1-gamma)N.  A coordinate counts as revealed in a round if
    anyone contributed to it; a revealed coordinate with no honest
    contributor is a privacy-floor violation (its masked sum is a function
    of adversarial inputs alone)."""
    if not traces:
        raise ValueError("no traces to analyze")
    honest_counts = []
    for trace in traces:
        revealed_mask = trace.contributors_total > 0
        honest_counts.append(trace.contributors_honest[revealed_mask])
    honest = np.concatenate(honest_counts)
    if honest.size == 0:
        raise ValueError("no coordinate was revealed in any round")
    prediction = expected_contributors(pp)
    mean = float(honest.mean())
    return ContributorReport(
        rounds=len(traces),
        revealed=int(honest.size),
        mean_honest=mean,
        min_honest=int(honest.min()),
        histogram=tuple(int(x) for x in np.bincount(honest)),
        prediction=prediction,
        asymptote=privacy_guarantee(pp).exact,
        relative_gap=abs(mean - prediction) / prediction,
        floor_violations=int((honest == 0).sum()),
    )


@dataclass(frozen=True)
class CompressionReport:
    """Selection-set sizes relative to d, against p and against alpha."""

    users: int
    rounds: int
    mean_ratio: float
    min_ratio: float
    max_ratio: float
    p: float
    alpha: float
    gap_to_p: float
    p_alpha_gap: float

    def lines(self) -> List[str]:
        return [
            f"users x rounds:        {self.users} x {self.rounds}",
            f"mean |U_i|/d:          {self.mean_ratio:.6f}",
            f"selection p:           {self.p:.6f}",
            f"relative gap to p:     {self.gap_to_p * 100:.3f}%",
            f"min / max |U_i|/d:     {self.min_ratio:.6f} / {self.max_ratio:.6f}",
            f"nominal alpha:         {self.alpha:.6f}",
            f"|p - alpha| / alpha:   {self.p_alpha_gap * 100:.3f}%",
        ]


def compression_report(
    traces: Sequence[RoundTrace], alpha: float, n: int
) -> CompressionReport:
    """Mean transmitted fraction |U_i|/d over all users and rounds.  Its
    expectation is p, and p itself sits within a few percent of alpha at
    moderate N; both gaps are reported."""
    if not traces:
        raise ValueError("no traces to analyze")
    ratios = []
    users = None
    for trace in traces:
        d = trace.contributors_total.shape[0]
        sizes = np.array(sorted(trace.selection_sizes.values()), dtype=np.float64)
        users = len(sizes) if users is None else users
        ratios.append(sizes / d)
    flat = np.concatenate(ratios)
    p = selection_probability(alpha, n)
    mean = float(flat.mean())
    return CompressionReport(
        users=int(users or 0),
        rounds=len(traces),
        mean_ratio=mean,
        min_ratio=float(flat.min()),
        max_ratio=float(flat.max()),
        p=p,
        alpha=alpha,
        gap_to_p=abs(mean - p) / p,
        p_alpha_gap=abs(p - alpha) / alpha,
    )
