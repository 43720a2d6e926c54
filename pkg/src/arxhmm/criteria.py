"""Information criteria and the two regime-selection procedures.

AIC/BIC use the observed log-likelihood of the predictive mixture; ICL
plugs the pointwise most probable states into the completed likelihood.
Selection is either by criterion minimization over a regime range or by
the sequential goodness-of-fit rule: pick the first regime count whose
bootstrap P-value clears the level.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import emissions as em
from .em import EmConfig, EmError, FitResult
from .gof import AVG_CVM, _substream, bootstrap_pvalue
from .model import HmmModel, LikelihoodUnderflow, SeriesData, emission_matrices, smooth

CSV_HEADER = ["ell", "loglik", "n_params", "aic", "bic", "icl", "gof_pvalue"]

_Q_LOG_GUARD = 1e-300


@dataclass
class CriteriaRow:
    ell: int
    loglik: float
    n_params: int
    aic: float
    bic: float
    icl: float
    gof_pvalue: float | None = None


def information_criteria(fit: FitResult, data: SeriesData) -> CriteriaRow:
    """AIC, BIC, and ICL for one fitted model.

    The effective sample size is the number of likelihood terms, n - p.
    The ICL state path is the pointwise argmax of the smoothed
    probabilities; its first transition term uses the initial distribution.
    """
    model = fit.model
    m = data.n - model.p
    k = fit.n_params
    aic = 2.0 * k - 2.0 * fit.loglik
    bic = np.log(m) * k - 2.0 * fit.loglik
    fs = smooth(model, data)
    path = np.argmax(fs.lam, axis=1)
    dens, _, _ = emission_matrices(model, data)
    emit_term = np.log(np.maximum(dens[np.arange(m), path], _Q_LOG_GUARD)).sum()
    trans = np.log(max(model.eta0[path[0]], _Q_LOG_GUARD))
    if m > 1:
        q = model.Q[path[:-1], path[1:]]
        trans += np.log(np.maximum(q, _Q_LOG_GUARD)).sum()
    icl = np.log(m) * k - 2.0 * emit_term - 2.0 * trans
    return CriteriaRow(
        ell=model.ell,
        loglik=fit.loglik,
        n_params=k,
        aic=float(aic),
        bic=float(bic),
        icl=float(icl),
    )


def select_by_ic(rows: list[CriteriaRow], criterion: str) -> int:
    """Regime count minimizing a criterion; ties go to the smaller count."""
    if criterion not in ("aic", "bic", "icl"):
        raise ValueError(f"unknown criterion {criterion!r}")
    rows = sorted(rows, key=lambda r: r.ell)
    values = [getattr(r, criterion) for r in rows]
    return rows[int(np.argmin(values))].ell


@dataclass
class GofSelection:
    selected: int
    p_values: dict
    adequate: bool
    reports: dict


def select_by_gof(
    data: SeriesData,
    ell_range,
    p: int,
    family=em.GAUSSIAN_FAMILY,
    zero_inflated: bool = False,
    statistic: str = AVG_CVM,
    B: int = 100,
    M: int = 50,
    alpha: float = 0.05,
    seed: int | None = None,
    em_config: EmConfig | None = None,
    workers: int = 1,
) -> GofSelection:
    """First regime count whose bootstrap P-value exceeds alpha.

    If no candidate clears the level, returns the one with the largest
    P-value and adequate=False.  Candidates whose fit fails are skipped.
    """
    ells = sorted(ell_range)
    if zero_inflated and ells and ells[0] < 2:
        raise ValueError("zero-inflated candidates start at 2 regimes")
    p_values: dict = {}
    reports: dict = {}
    for i, ell in enumerate(ells):
        try:
            report = bootstrap_pvalue(
                data,
                ell,
                p,
                family=family,
                zero_inflated=zero_inflated,
                statistic=statistic,
                B=B,
                M=M,
                seed=None if seed is None else int(_substream(seed, 4, ell).integers(2**31)),
                em_config=em_config,
                workers=workers,
            )
        except (EmError, LikelihoodUnderflow, ValueError) as e:
            warnings.warn(f"fit failed for ell={ell}: {e!r}; skipping")
            continue
        p_values[ell] = report.p_value
        reports[ell] = report
        if report.p_value > alpha:
            return GofSelection(selected=ell, p_values=p_values, adequate=True, reports=reports)
    if not p_values:
        raise EmError("no candidate model could be fitted")
    best = max(p_values, key=lambda k: p_values[k])
    return GofSelection(selected=best, p_values=p_values, adequate=False, reports=reports)


def write_criteria_csv(rows: list[CriteriaRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(
                [
                    r.ell,
                    repr(r.loglik),
                    r.n_params,
                    repr(r.aic),
                    repr(r.bic),
                    repr(r.icl),
                    "" if r.gof_pvalue is None else repr(r.gof_pvalue),
                ]
            )
