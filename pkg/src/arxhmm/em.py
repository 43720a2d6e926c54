"""Maximum-likelihood estimation of ARX-HMMs by EM.

The E-step reuses the forward-backward smoother; the M-step splits by
regime: weighted least squares for Gaussian regimes, Newton iterations for
log-linear Poisson regimes, a constrained quasi-Newton solve for linear
Poisson regimes, and the closed-form update for a constant transition
matrix.  Multiple jittered restarts guard against local maxima.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from . import emissions as em
from .emissions import EmissionFamily, EmissionParams
from .model import (
    HmmModel,
    LikelihoodUnderflow,
    SeriesData,
    design,
    emission_matrices,
    smooth_from_density,
)

RIDGE = 1e-8
SIGMA_FLOOR = 1e-6
WEIGHT_FLOOR = 1e-8
# Intercept clamp when a Poisson regime sees only zeros and the MLE runs off
# to -infinity.
LOG_INTERCEPT_CLAMP = -30.0
PHI_SUM_CAP = 1.0 - 1e-6
ALPHA1_FLOOR = 1e-6
MAX_INNER_ITERS = 200


class EmError(RuntimeError):
    pass


class DegenerateRegime(EmError):
    pass


class MStepFailure(EmError):
    def __init__(self, regime: int, msg: str):
        super().__init__(f"M-step failed for regime {regime}: {msg}")
        self.regime = regime


class FitFailure(EmError):
    pass


@dataclass
class EmConfig:
    max_iters: int = 500
    loglik_tol: float = 1e-8
    restarts: int = 10
    seed: int | None = None
    label_ordering: bool = True

    def __post_init__(self):
        if self.max_iters < 1 or self.loglik_tol <= 0:
            raise ValueError("max_iters >= 1 and loglik_tol > 0 required")


@dataclass
class FitResult:
    model: HmmModel
    loglik: float
    iters: int
    converged: bool
    n_params: int


def e_step(model: HmmModel, data: SeriesData):
    """Smoothed regime and pair probabilities for the current parameters."""
    from .model import smooth

    return smooth(model, data)


def m_step_gaussian(data: SeriesData, p: int, weights: np.ndarray) -> EmissionParams:
    """Weighted least squares on (lags, covariates) plus the weighted MLE variance."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total < WEIGHT_FLOOR:
        raise DegenerateRegime(f"total regime weight {total:.3g} below {WEIGHT_FLOOR}")
    lags, z = design(data, p)
    X = np.hstack([lags, z])
    y = data.y[p:]
    XtW = X.T * w
    A = XtW @ X
    b = XtW @ y
    try:
        coef = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        coef = np.linalg.solve(A + RIDGE * np.eye(A.shape[0]), b)
    if not np.all(np.isfinite(coef)):
        coef = np.linalg.solve(A + RIDGE * np.eye(A.shape[0]), b)
    resid = y - X @ coef
    sigma2 = float(w @ resid**2 / total)
    sigma = max(np.sqrt(sigma2), SIGMA_FLOOR)
    return EmissionParams(phi=coef[:p], alpha=coef[p:], sigma=sigma)


def _poisson_loglik_terms(mu: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    mu = np.maximum(mu, em.MEAN_FLOOR)
    return float(w @ (y * np.log(mu) - mu))


def _m_step_poisson_log(X, y, w, start):
    """Newton iterations on the concave weighted log-linear Poisson likelihood."""
    beta = start.copy()
    for _ in range(MAX_INNER_ITERS):
        eta = X @ beta
        eta = np.clip(eta, -700, 30)
        mu = np.exp(eta)
        grad = X.T @ (w * (y - mu))
        if np.max(np.abs(grad)) < 1e-8:
            return beta
        H = (X.T * (w * mu)) @ X
        try:
            step = np.linalg.solve(H + RIDGE * np.eye(H.shape[0]), grad)
        except np.linalg.LinAlgError:
            raise MStepFailure(-1, "singular Hessian")
        # damped update: halve until the objective does not decrease
        f0 = _poisson_loglik_terms(mu, y, w)
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            mu_c = np.exp(np.clip(X @ cand, -700, 30))
            if _poisson_loglik_terms(mu_c, y, w) >= f0 - 1e-12:
                beta = cand
                break
            scale *= 0.5
        else:
            return beta
    eta = np.clip(X @ beta, -700, 30)
    grad = X.T @ (w * (y - np.exp(eta)))
    if np.max(np.abs(grad)) < 1e-6:
        return beta
    raise MStepFailure(-1, "Newton did not converge")


def _m_step_poisson_linear(X, y, w, p, start):
    """Maximize the weighted likelihood under phi >= 0, sum(phi) < 1, alpha >= (>0, 0...)."""

    def neg(beta):
        mu = np.maximum(X @ beta, em.MEAN_FLOOR)
        return -float(w @ (y * np.log(mu) - mu))

    def grad(beta):
        mu = np.maximum(X @ beta, em.MEAN_FLOOR)
        return -(X.T @ (w * (y / mu - 1.0)))

    k = X.shape[1]
    bounds = [(0.0, None)] * p + [(ALPHA1_FLOOR, None)] + [(0.0, None)] * (k - p - 1)
    constraints = []
    if p > 0:
        a = np.zeros(k)
        a[:p] = -1.0
        constraints.append({"type": "ineq", "fun": lambda b: PHI_SUM_CAP + a @ b})
    res = optimize.minimize(
        neg,
        start,
        jac=grad,
        bounds=bounds,
        constraints=constraints,
        method="SLSQP",
        options={"maxiter": MAX_INNER_ITERS, "ftol": 1e-12},
    )
    beta = res.x
    beta[:p] = np.maximum(beta[:p], 0.0)
    beta[p] = max(beta[p], ALPHA1_FLOOR)
    beta[p + 1 :] = np.maximum(beta[p + 1 :], 0.0)
    if p > 0 and beta[:p].sum() > PHI_SUM_CAP:
        beta[:p] *= PHI_SUM_CAP / beta[:p].sum()
    if not np.all(np.isfinite(beta)):
        raise MStepFailure(-1, "non-finite linear-Poisson solution")
    return beta


def m_step_poisson(
    data: SeriesData,
    p: int,
    weights: np.ndarray,
    link: str,
    start: EmissionParams | None = None,
) -> EmissionParams:
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total < WEIGHT_FLOOR:
        raise DegenerateRegime(f"total regime weight {total:.3g} below {WEIGHT_FLOOR}")
    lags, z = design(data, p)
    y = data.y[p:]
    if link == em.LOG_LINEAR:
        X = np.hstack([np.log1p(lags), z])
        if start is None:
            beta0 = np.zeros(X.shape[1])
            ybar = float(w @ y / total)
            beta0[p] = np.log(ybar) if ybar > 0 else LOG_INTERCEPT_CLAMP
        else:
            beta0 = start.coef.copy()
        if float(w @ y) == 0.0:
            # all weighted responses zero: intercept MLE diverges; clamp it
            warnings.warn("degenerate Poisson fit: all weighted responses are zero")
            beta = np.zeros(X.shape[1])
            beta[p] = LOG_INTERCEPT_CLAMP
            return EmissionParams(phi=beta[:p], alpha=beta[p:])
        try:
            beta = _m_step_poisson_log(X, y, w, beta0)
        except MStepFailure:
            beta = _m_step_poisson_log(X, y, w, np.zeros(X.shape[1]))
    else:
        X = np.hstack([lags, z])
        if start is None:
            beta0 = np.zeros(X.shape[1])
            beta0[p] = max(float(w @ y / total), 0.1)
        else:
            beta0 = start.coef.copy()
        beta = _m_step_poisson_linear(X, y, w, p, beta0)
    return EmissionParams(phi=beta[:p], alpha=beta[p:])


def m_step_transition(Lam: np.ndarray, prev_Q: np.ndarray | None = None) -> np.ndarray:
    """Closed-form constant-Q update from the summed pair probabilities."""
    counts = Lam.sum(axis=0)
    row = counts.sum(axis=1)
    ell = counts.shape[0]
    Q = np.empty_like(counts)
    for j in range(ell):
        if row[j] > 0:
            Q[j] = counts[j] / row[j]
        elif prev_Q is not None:
            warnings.warn(f"transition row {j} has zero mass; keeping previous row")
            Q[j] = prev_Q[j]
        else:
            warnings.warn(f"transition row {j} has zero mass; using uniform row")
            Q[j] = 1.0 / ell
    return Q


def _quantile_band_init(
    data: SeriesData,
    ell: int,
    p: int,
    family: EmissionFamily,
    zero_inflated: bool,
    rng: np.random.Generator,
    jitter: float,
) -> HmmModel:
    y = data.y[p:]
    r = data.z.shape[1]
    n_emit = ell - 1 if zero_inflated else ell
    bands = np.array_split(np.sort(y), n_emit)
    emis = []
    if zero_inflated:
        emis.append((em.ZERO_FAMILY, EmissionParams()))
    for band in bands:
        alpha = np.zeros(r)
        level = float(np.mean(band)) if band.size else float(np.mean(y))
        if family.kind == em.GAUSSIAN:
            alpha[0] = level
            sigma = max(float(np.std(band)) if band.size > 1 else float(np.std(y)), 1e-3)
            if jitter > 0:
                alpha[0] += jitter * sigma * rng.standard_normal()
                sigma *= float(np.exp(0.25 * jitter * rng.standard_normal()))
            prm = EmissionParams(phi=np.zeros(p), alpha=alpha, sigma=max(sigma, 1e-3))
        elif family.link == em.LOG_LINEAR:
            alpha[0] = np.log(max(level, 0.05))
            if jitter > 0:
                alpha[0] += 0.3 * jitter * rng.standard_normal()
            prm = EmissionParams(phi=np.zeros(p), alpha=alpha)
        else:
            alpha[0] = max(level, 0.1)
            if jitter > 0:
                alpha[0] *= float(np.exp(0.3 * jitter * rng.standard_normal()))
            prm = EmissionParams(phi=np.zeros(p), alpha=alpha)
        emis.append((family, prm))
    Q = np.full((ell, ell), 0.1 / max(ell - 1, 1))
    np.fill_diagonal(Q, 0.9)
    if ell == 1:
        Q = np.ones((1, 1))
    elif jitter > 0:
        Q = Q + 0.05 * jitter * rng.random((ell, ell))
        Q /= Q.sum(axis=1, keepdims=True)
    return HmmModel(emissions=tuple(emis), Q=Q, p=p, r=r)


def _relabel(model: HmmModel) -> HmmModel:
    """Sort non-pinned regimes ascending by fitted intercept."""
    start = 1 if model.zero_inflated else 0
    keys = [prm.alpha[0] for _, prm in model.emissions[start:]]
    order = list(range(start)) + [start + int(i) for i in np.argsort(keys, kind="stable")]
    emis = tuple(model.emissions[i] for i in order)
    Q = model.Q[np.ix_(order, order)]
    eta0 = model.eta0[order]
    return HmmModel(emissions=emis, Q=Q, p=model.p, r=model.r, eta0=eta0)


def _force_observable_zero(lam: np.ndarray, y_eff: np.ndarray) -> np.ndarray:
    """Zero-inflated Gaussian: the atom regime is observable from y == 0."""
    lam = lam.copy()
    at_zero = y_eff == 0.0
    lam[at_zero, :] = 0.0
    lam[at_zero, 0] = 1.0
    lam[~at_zero, 0] = 0.0
    rows = lam[~at_zero, :].sum(axis=1, keepdims=True)
    rows[rows == 0.0] = 1.0
    lam[~at_zero, :] /= rows
    return lam


def _em_single_run(
    data: SeriesData,
    model: HmmModel,
    family: EmissionFamily,
    config: EmConfig,
    history: list | None = None,
):
    p = model.p
    y_eff = data.y[p:]
    zero_inflated = model.zero_inflated
    dens, _, _ = emission_matrices(model, data)
    fs = smooth_from_density(model, dens)
    loglik = fs.loglik
    iters = 0
    converged = False
    for iters in range(1, config.max_iters + 1):
        lam = fs.lam
        if zero_inflated and family.kind == em.GAUSSIAN:
            lam = _force_observable_zero(lam, y_eff)
        emis = []
        start_j = 0
        if zero_inflated:
            emis.append(model.emissions[0])
            start_j = 1
        for j in range(start_j, model.ell):
            w = lam[:, j]
            if family.kind == em.GAUSSIAN:
                prm = m_step_gaussian(data, p, w)
            else:
                prm = m_step_poisson(data, p, w, family.link, start=model.emissions[j][1])
            emis.append((family, prm))
        Q = m_step_transition(fs.Lam, prev_Q=model.Q) if model.ell > 1 else np.ones((1, 1))
        model = HmmModel(emissions=tuple(emis), Q=Q, p=p, r=model.r, eta0=model.eta0)
        dens, _, _ = emission_matrices(model, data)
        fs = smooth_from_density(model, dens)
        if history is not None:
            history.append(fs.loglik)
        if abs(fs.loglik - loglik) < config.loglik_tol:
            loglik = fs.loglik
            converged = True
            break
        loglik = fs.loglik
    return model, loglik, iters, converged


def em_fit(
    data: SeriesData,
    ell: int,
    p: int,
    family: EmissionFamily = em.GAUSSIAN_FAMILY,
    zero_inflated: bool = False,
    config: EmConfig | None = None,
) -> FitResult:
    """Best-of-restarts EM fit of an ell-regime model.

    For zero-inflated fits, ell counts all regimes including the pinned
    point mass at index 0 (so ell >= 2).
    """
    if config is None:
        config = EmConfig()
    if zero_inflated and ell < 2:
        raise ValueError("zero-inflated fits need ell >= 2")
    n_emit = ell - 1 if zero_inflated else ell
    dim = family.n_params(p, data.z.shape[1])
    if data.n <= p + n_emit * dim:
        raise ValueError("series too short for the requested model size")
    rng = np.random.default_rng(config.seed)
    best = None
    failures = []
    n_starts = 1 if ell == 1 else config.restarts
    for s in range(n_starts):
        jitter = 0.0 if s == 0 else 1.0
        init = _quantile_band_init(data, ell, p, family, zero_inflated, rng, jitter)
        try:
            model, loglik, iters, converged = _em_single_run(data, init, family, config)
        except (LikelihoodUnderflow, EmError, np.linalg.LinAlgError) as e:
            failures.append(repr(e))
            continue
        if best is None or loglik > best[1]:
            best = (model, loglik, iters, converged)
    if best is None:
        raise FitFailure(f"all {n_starts} restarts failed: {failures[:3]}")
    model, loglik, iters, converged = best
    if config.label_ordering and model.ell - (1 if zero_inflated else 0) > 1:
        model = _relabel(model)
    return FitResult(
        model=model,
        loglik=loglik,
        iters=iters,
        converged=converged,
        n_params=model.n_params(),
    )
