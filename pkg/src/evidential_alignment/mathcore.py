"""Special functions and Dirichlet analytics.

Scalar reference implementations. The batched versions used in training
live in :mod:`evidential_alignment.kernels` and are checked against these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Lanczos approximation, g=7, n=9.
LANCZOS_G = 7.0
LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Shift threshold for the asymptotic expansions of digamma / trigamma.
ASYMPTOTIC_MIN = 6.0

# Bernoulli-number coefficients B_2k / (2k) for the digamma series.
_DIGAMMA_SERIES = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_2k for the trigamma series.
_TRIGAMMA_SERIES = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)

KL_CLAMP = 1e-12


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


def _check_positive(z: float, name: str) -> float:
    z = float(z)
    if not math.isfinite(z) or z <= 0.0:
        raise DomainError(f"{name} requires a finite positive argument, got {z!r}")
    return z


def _lanczos_lgamma(z: float) -> float:
    # valid for z >= 0.5
    z -= 1.0
    acc = LANCZOS_COEF[0]
    for i in range(1, 9):
        acc += LANCZOS_COEF[i] / (z + i)
    t = z + LANCZOS_G + 0.5
    return HALF_LOG_2PI + (z + 0.5) * math.log(t) - t + math.log(acc)


def lgamma(z: float) -> float:
    """Natural log of the gamma function for z > 0."""
    z = _check_positive(z, "lgamma")
    if z == 1.0 or z == 2.0:
        return 0.0
    if z < 0.5:
        # reflection: Gamma(z) Gamma(1-z) = pi / sin(pi z)
        return math.log(math.pi / math.sin(math.pi * z)) - _lanczos_lgamma(1.0 - z)
    return _lanczos_lgamma(z)


def digamma(z: float) -> float:
    """Logarithmic derivative of the gamma function for z > 0."""
    z = _check_positive(z, "digamma")
    acc = 0.0
    while z < ASYMPTOTIC_MIN:
        acc -= 1.0 / z
        z += 1.0
    inv2 = 1.0 / (z * z)
    series = 0.0
    for c in reversed(_DIGAMMA_SERIES):
        series = series * inv2 + c
    return acc + math.log(z) - 0.5 / z - series * inv2


def trigamma(z: float) -> float:
    """Second derivative of log-gamma for z > 0."""
    z = _check_positive(z, "trigamma")
    acc = 0.0
    while z < ASYMPTOTIC_MIN:
        acc += 1.0 / (z * z)
        z += 1.0
    inv = 1.0 / z
    inv2 = inv * inv
    series = 0.0
    for c in reversed(_TRIGAMMA_SERIES):
        series = series * inv2 + c
    return acc + inv + 0.5 * inv2 + inv * inv2 * series


@dataclass(frozen=True)
class DirichletParams:
    """Concentration parameters of a Dirichlet over K classes.

    Every entry is at least 1 since alpha = evidence + 1.
    """

    alpha: tuple[float, ...]

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha)
        if len(alpha) < 2:
            raise ValueError("a Dirichlet needs at least 2 classes")
        for a in alpha:
            if not math.isfinite(a) or a < 1.0:
                raise ValueError(f"concentration parameters must be finite and >= 1, got {a!r}")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def from_evidence(cls, evidence) -> "DirichletParams":
        return cls(tuple(float(e) + 1.0 for e in evidence))

    @property
    def K(self) -> int:
        return len(self.alpha)

    @property
    def strength(self) -> float:
        return math.fsum(self.alpha)


def _params(alpha) -> DirichletParams:
    return alpha if isinstance(alpha, DirichletParams) else DirichletParams(tuple(alpha))


def log_beta(alpha) -> float:
    """Log of the multivariate Beta function."""
    p = _params(alpha)
    return math.fsum(lgamma(a) for a in p.alpha) - lgamma(p.strength)


def kl_to_uniform(alpha) -> float:
    """KL(Dir(alpha) || Dir(1, ..., 1)) in closed form."""
    p = _params(alpha)
    S = p.strength
    psi_S = digamma(S)
    # log B(1) = -lgamma(K)
    kl = -lgamma(float(p.K)) - log_beta(p)
    kl += math.fsum((a - 1.0) * (digamma(a) - psi_S) for a in p.alpha)
    if -KL_CLAMP <= kl < 0.0:
        return 0.0
    return kl


def expected_probs(alpha) -> np.ndarray:
    p = _params(alpha)
    a = np.asarray(p.alpha)
    return a / a.sum()


def uncertainty(alpha) -> float:
    """Epistemic uncertainty K / S; equals 1 with zero evidence."""
    p = _params(alpha)
    return p.K / p.strength
