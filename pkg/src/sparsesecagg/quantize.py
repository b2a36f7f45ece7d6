"""Stochastic quantization between real gradients and field vectors.

A local gradient y is scaled by beta / (p * (1 - theta)), stochastically
rounded onto the 1/c lattice, and the integer numerator is embedded into
the field with phi.  The scaling pre-divides by the expected participation
so the aggregate is an unbiased estimate of the weighted gradient sum; the
server maps the aggregate back with (1/c) * phi_inv.

Rounding randomness comes from the caller (one uniform draw per
coordinate), so runs are reproducible from the PRG lanes.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np

from .errors import ConfigError, OverflowBudgetViolation
from .field import FieldModulus

DEFAULT_QUANTIZATION_LEVEL = 2**10


@dataclass(frozen=True)
class QuantizationConfig:
    """Per-user quantization parameters.

    clip_bound limits the magnitude of each raw gradient coordinate; the
    overflow budget below guarantees that under this clip the field
    aggregate of N users decodes unambiguously.  The cohort-level
    constraint sum(beta_i) = 1 is validated where the full weight vector
    is known.
    """

    c: int
    beta: float
    p: float
    theta: float
    clip_bound: float

    def __post_init__(self) -> None:
        if self.c < 1 or int(self.c) != self.c:
            raise ConfigError("c", f"quantization level must be a positive integer, got {self.c}")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError("beta", f"weight must be in (0, 1], got {self.beta}")
        if not 0.0 < self.p <= 1.0:
            raise ConfigError("p", f"selection probability must be in (0, 1], got {self.p}")
        if not 0.0 <= self.theta < 0.5:
            raise ConfigError("theta", f"dropout rate must be in [0, 0.5), got {self.theta}")
        if self.clip_bound <= 0.0:
            raise ConfigError("clip_bound", f"clip bound must be positive, got {self.clip_bound}")

    @property
    def scale(self) -> float:
        return self.beta / (self.p * (1.0 - self.theta))


def uniform01_from_words(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words to float64 uniforms in [0, 1) with 53-bit precision."""
    return (words >> np.uint64(11)) * 2.0**-53


def stochastic_round(z: float, c: int, u: float) -> Fraction:
    """Round z onto the 1/c lattice without bias.

    Returns floor(c*z)/c when u >= c*z - floor(c*z), else (floor(c*z)+1)/c,
    so the expectation over uniform u is exactly z.
    """
    cz = c * z
    base = math.floor(cz)
    if u < cz - base:
        base += 1
    return Fraction(base, c)


def round_numerators(z: np.ndarray, c: int, u: np.ndarray) -> np.ndarray:
    """Vector stochastic rounding; returns int64 lattice numerators."""
    cz = c * z
    base = np.floor(cz)
    return (base + (u < cz - base)).astype(np.int64)


def clip_gradient(y: np.ndarray, clip_bound: float) -> np.ndarray:
    """Clip each raw coordinate into [-clip_bound, clip_bound]."""
    return np.clip(y, -clip_bound, clip_bound)


def quantize_gradient(
    y: np.ndarray,
    cfg: QuantizationConfig,
    u: np.ndarray,
    modulus: FieldModulus,
) -> np.ndarray:
    """Scale, stochastically round and embed a gradient vector.

    Requires |y| <= clip_bound coordinate-wise (apply clip_gradient first);
    a violation means the overflow budget no longer covers this vector.
    Returns a uint64 array of field elements.
    """
    if y.size and float(np.max(np.abs(y))) > cfg.clip_bound * (1 + 1e-12):
        raise OverflowBudgetViolation(
            f"gradient coordinate exceeds clip bound {cfg.clip_bound}; "
            "the field aggregate could decode incorrectly"
        )
    numerators = round_numerators(cfg.scale * y, cfg.c, u)
    return np.where(numerators >= 0, numerators, modulus.q + numerators).astype(np.uint64)


def dequantize_aggregate(ybar: np.ndarray, c: int, modulus: FieldModulus) -> np.ndarray:
    """Map an aggregated field vector back to reals: (1/c) * phi_inv."""
    return modulus.phi_inv_array(ybar) / c


def check_overflow_budget(
    n: int,
    c: int,
    beta_max: float,
    clip_bound: float,
    p: float,
    theta: float,
    modulus: FieldModulus,
) -> float:
    """Verify N * (c * beta_max * clip_bound / (p(1-theta)) + 1) < q/2.

    The left side bounds the worst-case magnitude of the signed aggregate
    numerator, so satisfying it makes phi_inv decoding unambiguous.
    Returns the remaining margin (q/2 minus the bound); raises when the
    budget is violated.
    """
    worst = n * (c * beta_max * clip_bound / (p * (1.0 - theta)) + 1.0)
    margin = modulus.q / 2 - worst
    if margin <= 0:
        raise OverflowBudgetViolation(
            f"aggregate bound {worst:.6g} is not below q/2 = {modulus.q / 2:.6g} "
            f"(violating margin {-margin:.6g})"
        )
    return margin
