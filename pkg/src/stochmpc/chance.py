"""Probability kernel and chance-constraint tightening laws.

Two ways to turn ``Pr(g @ x <= h) >= p`` into a deterministic margin on the
noise-free state:

* Gaussian-exact: the error projection ``g @ e`` is normal with variance
  ``g @ cov_e @ g``, so the margin is ``sqrt(2 g' cov_e g) * erf_inv(2p - 1)``.
* Distribution-robust: Cantelli's one-sided inequality gives the margin
  ``sigma * sqrt(p / (1 - p))`` for any finite-variance zero-mean error; it is
  never smaller than the Gaussian margin on the shared domain p in [0.5, 1).

The error function pair is implemented locally (Maclaurin series for small
arguments, Legendre continued fraction for the complementary function beyond,
Newton-refined inverse) so the round-trip accuracy is pinned by this module
alone and tests can check it against independent oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, DomainError
from .validation import as_vector

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_SERIES_CUTOFF = 2.0  # below: Maclaurin series; above: continued fraction
_SATURATION_CUTOFF = 6.0  # |erf| indistinguishable from 1 in double precision


class TighteningLaw(str, Enum):
    GAUSSIAN = "gaussian"
    CANTELLI = "cantelli"


@dataclass(frozen=True)
class RiskParameter:
    """Required satisfaction probability p of a single-step chance constraint.

    Larger p means less tolerated risk. The alternative convention
    ``p_tilde = 1 - p`` (risk level rather than confidence) is accepted at the
    config layer and converted on load. The Gaussian law additionally needs
    p >= 0.5; values below would loosen the constraint instead of tightening
    it and are refused there.
    """

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise DomainError(f"risk parameter must lie in [0, 1), got {self.p}")


def _risk_value(p) -> float:
    value = p.p if isinstance(p, RiskParameter) else float(p)
    if not 0.0 <= value < 1.0:
        raise DomainError(f"risk parameter must lie in [0, 1), got {value}")
    return value


def erf(x: float) -> float:
    """Error function, accurate to ~1e-15 absolute over the real line."""
    x = float(x)
    if math.isnan(x):
        raise DomainError("erf requires a finite argument")
    sign = -1.0 if x < 0.0 else 1.0
    ax = abs(x)
    if ax > _SATURATION_CUTOFF:
        return sign  # erfc(6) ~ 2e-17, below double resolution of 1 - erf
    if ax <= _SERIES_CUTOFF:
        return sign * _erf_series(ax)
    return sign * (1.0 - _erfc_continued_fraction(ax))


def _erf_series(x: float) -> float:
    # erf(x) = 2/sqrt(pi) * sum_n (-1)^n x^(2n+1) / (n! (2n+1))
    coeff = x  # (-1)^n x^(2n+1) / n!
    total = x
    for n in range(1, 200):
        coeff *= -x * x / n
        delta = coeff / (2 * n + 1)
        total += delta
        if abs(delta) < 1e-18 * abs(total) + 5e-324:
            break
    return _TWO_OVER_SQRT_PI * total

def _erfc_continued_fraction(x: float) -> float:
    # erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    # with partial numerators 1, 1/2, 1, 3/2, 2, ... over constant partial
    # denominators x, evaluated by the modified Lentz scheme. Converges in a
    # few dozen iterations for x >= 2.
    tiny = 1e-300
    f = tiny  # b_0 = 0
    c = f
    d = 0.0
    for k in range(1, 300):
        a_k = 1.0 if k == 1 else 0.5 * (k - 1)
        d = x + a_k * d
        if d == 0.0:
            d = tiny
        c = x + a_k / c
        if c == 0.0:
            c = tiny
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x * x) / math.sqrt(math.pi) * f


def erf_inv(y: float) -> float:
    """Inverse error function on (-1, 1); erf(erf_inv(y)) == y to ~1e-15.

    Raises DomainError at |y| >= 1, where the true value is unbounded.
    """
    y = float(y)
    if math.isnan(y) or abs(y) >= 1.0:
        raise DomainError(f"erf_inv is defined on (-1, 1) only, got {y}")
    if y == 0.0:
        return 0.0

    # Winitzki's closed-form estimate (~3 digits), then Newton on erf. The
    # derivative 2/sqrt(pi) exp(-x^2) is exact, so convergence is quadratic.
    a = 0.147
    log1my2 = math.log1p(-y * y)
    term = 2.0 / (math.pi * a) + 0.5 * log1my2
    x = math.copysign(math.sqrt(math.sqrt(term * term - log1my2 / a) - term), y)
    for _ in range(60):
        residual = erf(x) - y
        step = residual / (_TWO_OVER_SQRT_PI * math.exp(-x * x))
        x -= step
        if abs(step) <= 1e-15 * (1.0 + abs(x)):
            break
    return x


def normal_cdf(x: float, mu: float = 0.0, sigma: float = 1.0) -> float:
    """Gaussian distribution function; exactly 0.5 at the mean."""
    if sigma <= 0.0:
        raise DomainError(f"normal_cdf requires sigma > 0, got {sigma}")
    return 0.5 + 0.5 * erf((x - mu) / (sigma * math.sqrt(2.0)))


def gaussian_quantile_factor(p) -> float:
    """Unit-variance Gaussian tightening factor ``sqrt(2) * erf_inv(2p - 1)``.

    Defined for p in [0.5, 1): below 0.5 the factor would be negative, i.e.
    constraint loosening, which is refused; at p -> 1 it diverges.
    """
    p = _risk_value(p)
    if p < 0.5:
        raise DomainError(
            f"Gaussian tightening requires p in [0.5, 1), got {p}; "
            "p < 0.5 would loosen the constraint"
        )
    return math.sqrt(2.0) * erf_inv(2.0 * p - 1.0)


def cantelli_quantile_factor(p) -> float:
    """Unit-variance distribution-free tightening factor ``sqrt(p / (1 - p))``."""
    p = _risk_value(p)
    return math.sqrt(p / (1.0 - p))


def gaussian_margin(g: np.ndarray, sigma_e: np.ndarray, p) -> float:
    """Exact Gaussian margin ``sqrt(2 g' sigma_e g) * erf_inv(2p - 1)``."""
    g = as_vector(g, "g")
    variance = float(g @ np.asarray(sigma_e, dtype=float) @ g)
    if variance < -1e-10:
        raise ConfigurationError(
            f"error covariance projects to negative variance {variance:.3e}"
        )
    return math.sqrt(2.0 * max(variance, 0.0)) * erf_inv(2.0 * _check_gaussian_p(p) - 1.0)


def _check_gaussian_p(p) -> float:
    p = _risk_value(p)
    if p < 0.5:
        raise DomainError(
            f"Gaussian tightening requires p in [0.5, 1), got {p}; "
            "p < 0.5 would loosen the constraint"
        )
    return p


def cantelli_margin(sigma: float, p) -> float:
    """Distribution-free margin ``sigma * sqrt(p / (1 - p))``.

    ``sqrt(p / (1 - p))`` acts as the quantile function of the worst-case
    distribution with the given variance, so this is valid for any zero-mean
    finite-variance error, at the price of conservatism.
    """
    sigma = float(sigma)
    if sigma < 0.0:
        raise DomainError(f"standard deviation must be nonnegative, got {sigma}")
    return sigma * cantelli_quantile_factor(p)


def chebyshev_bound(c: float, variance: float, mean: float = 0.0) -> float:
    """Two-sided tail bound: ``Pr(|X - mean| >= c) <= min(1, variance / c^2)``."""
    del mean  # the bound depends only on the deviation scale, not the centre
    c = float(c)
    if c <= 0.0:
        raise DomainError(f"threshold must be positive, got {c}")
    if variance < 0.0:
        raise DomainError(f"variance must be nonnegative, got {variance}")
    return min(1.0, variance / (c * c))


def cantelli_bound(c: float, variance: float) -> float:
    """One-sided tail bound: ``Pr(X - mean >= c) <= variance / (variance + c^2)``."""
    c = float(c)
    if c <= 0.0:
        raise DomainError(f"threshold must be positive, got {c}")
    if variance < 0.0:
        raise DomainError(f"variance must be nonnegative, got {variance}")
    return variance / (variance + c * c)


def mean_shift(g: np.ndarray, mean_e: np.ndarray) -> float:
    """Extra margin ``g @ mean_e`` for a non-zero-mean error.

    Subtracted from the constraint bound alongside the variance margin, so the
    tightened constraint reads ``g @ z <= h - mean_shift - margin``.
    """
    g = as_vector(g, "g")
    mean_e = as_vector(mean_e, "mean_e", size=g.size)
    return float(g @ mean_e)


@dataclass(frozen=True)
class TighteningSchedule:
    """Per-prediction-step margins gamma_1 ... gamma_N for one half-space."""

    gammas: np.ndarray
    law: TighteningLaw
    risk: RiskParameter

    def __post_init__(self):
        gammas = as_vector(self.gammas, "gammas")
        gammas.setflags(write=False)
        object.__setattr__(self, "gammas", gammas)

    @property
    def horizon(self) -> int:
        return self.gammas.size


def tightening_schedule(
    g: np.ndarray, covariances, p, law: TighteningLaw = TighteningLaw.GAUSSIAN
) -> TighteningSchedule:
    """Margins for prediction steps 1..N from an error-covariance schedule.

    ``covariances`` holds N+1 matrices for steps 0..N; step 0 has zero error
    by construction and carries no constraint, so it is skipped.
    """
    g = as_vector(g, "g")
    law = TighteningLaw(law)
    sigmas = getattr(covariances, "sigmas", covariances)
    gammas = []
    for sigma_e in sigmas[1:]:
        if law is TighteningLaw.GAUSSIAN:
            gammas.append(gaussian_margin(g, sigma_e, p))
        else:
            variance = float(g @ np.asarray(sigma_e, dtype=float) @ g)
            gammas.append(cantelli_margin(math.sqrt(max(variance, 0.0)), p))
    return TighteningSchedule(
        gammas=np.array(gammas), law=law, risk=RiskParameter(_risk_value(p))
    )
