"""Randomized Rosenblatt pseudo-observations and bootstrap goodness-of-fit.

Under a correctly specified model, u_t = F_t(y_t-) + v_t * dF_t(y_t) with
iid uniform randomization draws v_t are themselves iid uniform, including
at atoms of a discrete or mixed conditional law.  Distance-to-uniform
statistics (Cramer-von Mises, Kolmogorov-Smirnov, and the averaged
randomization variant) are calibrated by parametric bootstrap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from . import emissions as em
from .dgp import SimulationOverflow, simulate
from .em import EmConfig, EmError, FitResult, em_fit
from .model import (
    HmmModel,
    LikelihoodUnderflow,
    SeriesData,
    emission_matrices,
    predictive_weight_matrix,
    smooth_from_density,
    _forward,
)

CVM = "cvm"
KS = "ks"
AVG_CVM = "avgcvm"

MAX_REPLICATE_ATTEMPTS = 5


@dataclass
class PseudoObs:
    """Randomized PIT values with the draws that produced them."""

    u: np.ndarray
    v: np.ndarray


@dataclass
class GofReport:
    statistic: str
    observed: float
    B: int
    M: int
    p_value: float
    boot_stats: np.ndarray | None = None
    fit: FitResult | None = None

    def to_json(self) -> str:
        doc = {
            "statistic": self.statistic,
            "observed": self.observed,
            "B": self.B,
            "M": self.M,
            "p_value": self.p_value,
        }
        if self.boot_stats is not None:
            doc["boot_stats"] = [float(s) for s in self.boot_stats]
        return json.dumps(doc, indent=2)


def model_is_continuous(model: HmmModel) -> bool:
    return all(f.is_continuous for f, _ in model.emissions)


def _pit_matrix(model: HmmModel, data: SeriesData):
    """Per-t conditional cdf and left-cdf of the predictive mixture."""
    dens, cdf, cdfl = emission_matrices(model, data)
    eta, _ = _forward(model, dens)
    W = predictive_weight_matrix(model, eta)
    F = np.einsum("tj,tj->t", W, cdf)
    Fl = np.einsum("tj,tj->t", W, cdfl)
    return F, Fl


def pseudo_observations(
    model: HmmModel,
    data: SeriesData,
    v: np.ndarray | None = None,
    rng: np.random.Generator | int | None = None,
) -> PseudoObs:
    """Randomized PIT values u_t = F_t(y_t-) + v_t * (F_t(y_t) - F_t(y_t-))."""
    F, Fl = _pit_matrix(model, data)
    m = F.shape[0]
    if v is None:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        v = rng.random(m)
    v = np.asarray(v, dtype=float)
    if v.shape != (m,):
        raise ValueError(f"need {m} randomization draws, got shape {v.shape}")
    u = Fl + v * (F - Fl)
    return PseudoObs(u=np.clip(u, 0.0, 1.0), v=v)


def cvm_statistic(u: np.ndarray) -> float:
    """Cramer-von Mises distance of the empirical cdf of u to uniform."""
    u = np.sort(np.asarray(u, dtype=float))
    m = u.shape[0]
    grid = (np.arange(1, m + 1) - 0.5) / m
    return float(np.sum((u - grid) ** 2) + 1.0 / (12.0 * m))


def ks_statistic(u: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance (scaled by sqrt(m)) to uniform."""
    u = np.sort(np.asarray(u, dtype=float))
    m = u.shape[0]
    t = np.arange(1, m + 1)
    d = np.maximum(np.abs(u - t / m), np.abs(u - (t - 1) / m))
    return float(np.sqrt(m) * d.max())


def averaged_cvm_from_u(U: np.ndarray) -> float:
    """Cramer-von Mises statistic of the averaged randomized empirical process.

    U is (m, M): one column of pseudo-observations per randomization draw.
    Uses the closed form m/3 + (1/M) sum u^2 - (1/(M^2 m)) sum_pairs max(.,.),
    with the all-pairs max computed from the sorted pooled sample.
    """
    U = np.asarray(U, dtype=float)
    m, M = U.shape
    flat = np.sort(U, axis=None)
    K = flat.shape[0]
    # sum over ordered pairs (a, b) of max(w_a, w_b): the i-th sorted value
    # is the max in 2i+1 of them
    pair_max = float(flat @ (2.0 * np.arange(K) + 1.0))
    return float(m / 3.0 + (U**2).sum() / M - pair_max / (M**2 * m))


def averaged_cvm(
    model: HmmModel,
    data: SeriesData,
    M: int,
    rng: np.random.Generator | int | None = None,
) -> float:
    """Averaged-randomization CvM statistic with M independent draw vectors."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    F, Fl = _pit_matrix(model, data)
    if model_is_continuous(model):
        # all randomization columns coincide, so the average is the plain CvM
        return cvm_statistic(F)
    m = F.shape[0]
    V = rng.random((m, M))
    U = Fl[:, None] + V * (F - Fl)[:, None]
    return averaged_cvm_from_u(U)


def compute_statistic(
    model: HmmModel,
    data: SeriesData,
    statistic: str,
    M: int,
    rng: np.random.Generator,
) -> float:
    if statistic == AVG_CVM:
        return averaged_cvm(model, data, M, rng)
    u = pseudo_observations(model, data, rng=rng).u
    if statistic == CVM:
        return cvm_statistic(u)
    if statistic == KS:
        return ks_statistic(u)
    raise ValueError(f"unknown statistic {statistic!r}")


def _substream(seed, *key) -> np.random.Generator:
    entropy = 0 if seed is None else seed
    return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=key))


def _fit(data, ell, p, family, zero_inflated, config):
    return em_fit(data, ell, p, family=family, zero_inflated=zero_inflated, config=config)


def _bootstrap_replicate(
    fitted: HmmModel,
    data: SeriesData,
    ell: int,
    p: int,
    family,
    zero_inflated: bool,
    statistic: str,
    M: int,
    seed,
    k: int,
    em_config: EmConfig,
):
    """One bootstrap statistic; None signals a conservative exceedance."""
    presample = data.y[:p][::-1].copy() if p > 0 else None
    for attempt in range(MAX_REPLICATE_ATTEMPTS):
        data_rng = _substream(seed, 1, k, attempt)
        try:
            sim, _ = simulate(fitted, data.n, data.z, rng=data_rng, presample=presample)
        except SimulationOverflow:
            continue
        cfg = EmConfig(
            max_iters=em_config.max_iters,
            loglik_tol=em_config.loglik_tol,
            restarts=em_config.restarts,
            seed=int(_substream(seed, 2, k, attempt).integers(2**31)),
            label_ordering=em_config.label_ordering,
        )
        try:
            refit = _fit(sim, ell, p, family, zero_inflated, cfg)
            v_rng = _substream(seed, 0, k, attempt)
            return compute_statistic(refit.model, sim, statistic, M, v_rng)
        except (EmError, LikelihoodUnderflow, ValueError):
            continue
    return None


def bootstrap_pvalue(
    data: SeriesData,
    ell: int,
    p: int,
    family=em.GAUSSIAN_FAMILY,
    zero_inflated: bool = False,
    statistic: str = AVG_CVM,
    B: int = 100,
    M: int = 50,
    seed: int | None = None,
    em_config: EmConfig | None = None,
    workers: int = 1,
    keep_boot_stats: bool = False,
    fit: FitResult | None = None,
) -> GofReport:
    """Parametric-bootstrap P-value of the goodness-of-fit statistic.

    Fits the model (unless a fit is supplied), simulates B series from the
    fitted parameters with the covariate path held fixed, refits each, and
    counts the fraction of bootstrap statistics at or above the observed one.
    Failed replicates count as exceedances after 5 resimulation attempts.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    if em_config is None:
        em_config = EmConfig(seed=int(_substream(seed, 3).integers(2**31)))
    if fit is None:
        fit = _fit(data, ell, p, family, zero_inflated, em_config)
    observed = compute_statistic(fit.model, data, statistic, M, _substream(seed, 0, 0, 0))

    args = (fit.model, data, ell, p, family, zero_inflated, statistic, M, seed)
    if workers > 1:
        stats = Parallel(n_jobs=workers)(
            delayed(_bootstrap_replicate)(*args, k + 1, em_config) for k in range(B)
        )
    else:
        stats = [_bootstrap_replicate(*args, k + 1, em_config) for k in range(B)]
    exceed = sum(1 if (s is None or s >= observed) else 0 for s in stats)
    boot = np.array([np.nan if s is None else s for s in stats])
    return GofReport(
        statistic=statistic,
        observed=float(observed),
        B=B,
        M=M,
        p_value=exceed / B,
        boot_stats=boot if keep_boot_stats else None,
        fit=fit,
    )
