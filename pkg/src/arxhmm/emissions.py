"""Per-regime conditional emission distributions.

Each regime of an ARX-HMM emits from a distribution whose parameters depend
on the lagged responses and exogenous covariates through a linear (or
log-linear) predictor.  Distributions live on a mixed reference measure
(counting measure on the nonnegative integers plus Lebesgue measure), so the
cdf, its left limit, and the jump size at atoms are all first-class
operations: the randomized probability integral transform needs exact
control of each.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

GAUSSIAN = "gaussian"
POISSON = "poisson"
ZERO = "zero"

LOG_LINEAR = "log"
LINEAR = "linear"

# Floor for the linear-link Poisson mean; keeps log-likelihoods finite while
# the EM iterates through transient parameter values.  Constraint enforcement
# proper lives in the M-step.
MEAN_FLOOR = 1e-10


class EmissionError(ValueError):
    pass


@dataclass(frozen=True)
class EmissionFamily:
    """Distribution family of one regime.

    kind: "gaussian", "poisson", or "zero" (point mass at 0).
    link: for Poisson only, "log" (log-linear mean) or "linear".
    """

    kind: str
    link: str | None = None

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, POISSON, ZERO):
            raise EmissionError(f"unknown family kind {self.kind!r}")
        if self.kind == POISSON:
            if self.link not in (LOG_LINEAR, LINEAR):
                raise EmissionError(f"Poisson link must be 'log' or 'linear', got {self.link!r}")
        elif self.link is not None:
            raise EmissionError(f"{self.kind} family takes no link")

    @property
    def is_continuous(self) -> bool:
        return self.kind == GAUSSIAN

    def n_params(self, p: int, r: int) -> int:
        if self.kind == GAUSSIAN:
            return p + r + 1
        if self.kind == POISSON:
            return p + r
        return 0


GAUSSIAN_FAMILY = EmissionFamily(GAUSSIAN)
POISSON_LOG = EmissionFamily(POISSON, LOG_LINEAR)
POISSON_LINEAR = EmissionFamily(POISSON, LINEAR)
ZERO_FAMILY = EmissionFamily(ZERO)


def _as_vector(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class EmissionParams:
    """Regression coefficients of one regime.

    phi multiplies the p lagged responses (raw lags for Gaussian and
    linear-Poisson, log(1+lag) for log-linear Poisson); alpha multiplies the
    covariates, alpha[0] the constant; sigma is the Gaussian standard
    deviation.
    """

    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "phi", _as_vector(self.phi))
        object.__setattr__(self, "alpha", _as_vector(self.alpha))
        if self.sigma is not None and not self.sigma > 0:
            raise EmissionError(f"sigma must be positive, got {self.sigma}")

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([self.phi, self.alpha])


def validate_linear_poisson(params: EmissionParams) -> None:
    """Raise unless the linear-link stationarity/positivity constraints hold."""
    phi, alpha = params.phi, params.alpha
    if np.any(phi < 0) or phi.sum() >= 1:
        raise EmissionError("linear Poisson needs phi_k >= 0 and sum(phi) < 1")
    if alpha.size == 0 or alpha[0] <= 0 or np.any(alpha[1:] < 0):
        raise EmissionError("linear Poisson needs alpha[0] > 0 and alpha[k] >= 0")


@dataclass(frozen=True)
class Predictor:
    """Lag/covariate vector conditioning one emission."""

    lags: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lags", _as_vector(self.lags))
        object.__setattr__(self, "covariates", _as_vector(self.covariates))


def _check_dims(params: EmissionParams, x: Predictor) -> None:
    if params.phi.size != x.lags.size:
        raise EmissionError(f"expected {params.phi.size} lags, got {x.lags.size}")
    if params.alpha.size != x.covariates.size:
        raise EmissionError(
            f"expected {params.alpha.size} covariates, got {x.covariates.size}"
        )


def emission_mean(params: EmissionParams, family: EmissionFamily, x: Predictor) -> float:
    """Conditional mean of one emission given its predictor."""
    if family.kind == ZERO:
        return 0.0
    _check_dims(params, x)
    if family.kind == GAUSSIAN:
        return float(params.phi @ x.lags + params.alpha @ x.covariates)
    if family.link == LOG_LINEAR:
        return float(np.exp(params.phi @ np.log1p(x.lags) + params.alpha @ x.covariates))
    mu = float(params.phi @ x.lags + params.alpha @ x.covariates)
    if mu <= 0:
        raise EmissionError(f"nonpositive linear-Poisson mean {mu}")
    return mu


def mean_vector(
    params: EmissionParams, family: EmissionFamily, lags: np.ndarray, z: np.ndarray
) -> np.ndarray:
    """Vectorized conditional means over a whole series.

    lags is (m, p) with row t holding (y_{t-1}, ..., y_{t-p}); z is (m, r).
    """
    m = z.shape[0]
    if family.kind == ZERO:
        return np.zeros(m)
    if family.kind == POISSON and family.link == LOG_LINEAR:
        eta = np.log1p(lags) @ params.phi + z @ params.alpha
        return np.exp(eta)
    mu = lags @ params.phi + z @ params.alpha
    if family.kind == POISSON:
        mu = np.maximum(mu, MEAN_FLOOR)
    return mu


def density_given_mean(family: EmissionFamily, mu, sigma, y) -> np.ndarray:
    """Density w.r.t. the family's reference measure, at precomputed means."""
    y = np.asarray(y, dtype=float)
    if family.kind == GAUSSIAN:
        return stats.norm.pdf(y, loc=mu, scale=sigma)
    if family.kind == ZERO:
        return (y == 0).astype(float)
    integral = (y >= 0) & (y == np.floor(y))
    return np.where(integral, stats.poisson.pmf(np.where(integral, y, 0.0), mu), 0.0)


def cdf_given_mean(family: EmissionFamily, mu, sigma, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if family.kind == GAUSSIAN:
        return stats.norm.cdf(y, loc=mu, scale=sigma)
    if family.kind == ZERO:
        return (y >= 0).astype(float)
    return stats.poisson.cdf(np.floor(y), mu)


def cdf_left_given_mean(family: EmissionFamily, mu, sigma, y) -> np.ndarray:
    """Left limit P(Y < y)."""
    y = np.asarray(y, dtype=float)
    if family.kind == GAUSSIAN:
        return stats.norm.cdf(y, loc=mu, scale=sigma)
    if family.kind == ZERO:
        return (y > 0).astype(float)
    integral = y == np.floor(y)
    # at an integer the left limit drops the atom; elsewhere it equals the cdf
    return np.where(integral, stats.poisson.cdf(y - 1, mu), stats.poisson.cdf(np.floor(y), mu))


def density(params: EmissionParams, family: EmissionFamily, x: Predictor, y: float) -> float:
    if family.kind == ZERO:
        return 1.0 if y == 0 else 0.0
    mu = emission_mean(params, family, x)
    return float(density_given_mean(family, mu, params.sigma, y))


def cdf(params: EmissionParams, family: EmissionFamily, x: Predictor, y: float) -> float:
    if family.kind == ZERO:
        return 1.0 if y >= 0 else 0.0
    mu = emission_mean(params, family, x)
    return float(cdf_given_mean(family, mu, params.sigma, y))


def cdf_left(params: EmissionParams, family: EmissionFamily, x: Predictor, y: float) -> float:
    if family.kind == ZERO:
        return 1.0 if y > 0 else 0.0
    mu = emission_mean(params, family, x)
    return float(cdf_left_given_mean(family, mu, params.sigma, y))


def jump(params: EmissionParams, family: EmissionFamily, x: Predictor, y: float) -> float:
    """Atom mass P(Y = y); zero everywhere for continuous families."""
    if family.kind == GAUSSIAN:
        return 0.0
    return cdf(params, family, x, y) - cdf_left(params, family, x, y)


def sample(
    params: EmissionParams, family: EmissionFamily, x: Predictor, rng: np.random.Generator
) -> float:
    if family.kind == ZERO:
        return 0.0
    mu = emission_mean(params, family, x)
    if family.kind == GAUSSIAN:
        return float(rng.normal(mu, params.sigma))
    return float(rng.poisson(mu))
