"""Spatial count-series forecasting pipeline.

Per geographic unit: seasonally difference the incidence series (period 7),
add a neighbor covariate (previous-day incidence summed over adjacent
units), scan Gaussian ARX-HMM candidates in lexicographic (regimes, lags)
order gated by the goodness-of-fit test, and predict held-out days with
the median of the one-step predictive mixture.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import optimize

from . import emissions as em
from .em import EmConfig, EmError, FitResult, em_fit
from .gof import AVG_CVM, bootstrap_pvalue, _substream
from .model import (
    HmmModel,
    LikelihoodUnderflow,
    SeriesData,
    conditional_cdf,
    emission_matrices,
    predictive_weights,
    _forward,
)
from .emissions import Predictor

SEASON = 7
MEDIAN_TOL = 1e-8


class ForecastError(ValueError):
    pass


@dataclass
class PanelData:
    """Aligned daily incidence (cases per 1000) for a set of units."""

    units: list
    populations: np.ndarray
    dates: pd.DatetimeIndex
    incidence: np.ndarray  # (n_dates, n_units)
    adjacency: np.ndarray  # symmetric 0/1, zero diagonal

    def __post_init__(self):
        A = np.asarray(self.adjacency)
        if A.shape != (len(self.units), len(self.units)):
            raise ForecastError("adjacency shape must match unit count")
        if not np.array_equal(A, A.T) or np.any(np.diag(A) != 0):
            raise ForecastError("adjacency must be symmetric with zero diagonal")

    @property
    def n_units(self) -> int:
        return len(self.units)


def load_panel(cases_csv, adjacency_csv) -> PanelData:
    """Long CSV (date, unit_id, cases, population) + edge list CSV."""
    cases = pd.read_csv(cases_csv, parse_dates=["date"])
    wide = cases.pivot_table(index="date", columns="unit_id", values="cases").sort_index()
    if wide.isna().any().any():
        raise ForecastError("case series must be aligned on a common date index")
    pops = cases.groupby("unit_id")["population"].first()
    units = list(wide.columns)
    pop = pops.reindex(units).to_numpy(dtype=float)
    incidence = wide.to_numpy(dtype=float) * 1000.0 / pop[None, :]
    adj = pd.read_csv(adjacency_csv)
    index = {u: i for i, u in enumerate(units)}
    A = np.zeros((len(units), len(units)), dtype=int)
    for a, b in zip(adj["unit_id_a"], adj["unit_id_b"]):
        if a in index and b in index:
            A[index[a], index[b]] = 1
            A[index[b], index[a]] = 1
    np.fill_diagonal(A, 0)
    return PanelData(
        units=units,
        populations=pop,
        dates=pd.DatetimeIndex(wide.index),
        incidence=incidence,
        adjacency=A,
    )


def neighbor_covariate(panel: PanelData, j: int) -> np.ndarray:
    """z_{t,2} = sum_k M_jk y_{t-1,k}, zero at the first date."""
    weights = panel.adjacency[j].astype(float)
    summed = panel.incidence @ weights
    z2 = np.empty(panel.incidence.shape[0])
    z2[0] = 0.0
    z2[1:] = summed[:-1]
    return z2


def seasonal_difference(y: np.ndarray, period: int = SEASON) -> np.ndarray:
    return y[period:] - y[:-period]


def build_covariates(panel: PanelData, j: int, through: int | None = None) -> SeriesData:
    """Seasonally differenced response with (1, neighbor-lag) covariates.

    through limits the series to the first `through` daily observations
    (the training window); default uses all dates.
    """
    T = panel.incidence.shape[0] if through is None else through
    if T < SEASON + 1:
        raise ForecastError("need at least 8 observations")
    y = panel.incidence[:T, j]
    z2 = neighbor_covariate(panel, j)[:T]
    ytil = seasonal_difference(y)
    z = np.column_stack([np.ones(T - SEASON), z2[SEASON:]])
    return SeriesData(y=ytil, z=z)


@dataclass
class ScanResult:
    unit: object
    ell: int
    p: int
    gof_pvalue: float
    adequate: bool
    fit: FitResult | None
    weekly_prediction: float | None = None
    daily_predictions: np.ndarray | None = None


def scan_models(
    series: SeriesData,
    ell_range=(2, 3, 4),
    p_range=tuple(range(15)),
    statistic: str = AVG_CVM,
    B: int = 100,
    M: int = 50,
    alpha: float = 0.05,
    seed: int | None = None,
    em_config: EmConfig | None = None,
):
    """First (regimes, lags) pair, in lexicographic order, passing the GoF gate.

    All candidates are Gaussian ARX-HMMs.  Returns (ell, p, p_value,
    adequate, fit); falls back to the largest P-value when nothing passes.
    """
    best = None
    for i, ell in enumerate(sorted(ell_range)):
        for p in sorted(p_range):
            if series.n <= p + ell * (p + series.z.shape[1] + 1):
                continue
            cand_seed = None if seed is None else int(
                _substream(seed, 30, ell, p).integers(2**31)
            )
            try:
                rep = bootstrap_pvalue(
                    series, ell, p, family=em.GAUSSIAN_FAMILY,
                    statistic=statistic, B=B, M=M, seed=cand_seed,
                    em_config=em_config,
                )
            except (EmError, LikelihoodUnderflow, ValueError) as e:
                warnings.warn(f"candidate (ell={ell}, p={p}) failed: {e!r}")
                continue
            if rep.p_value >= alpha:
                return ell, p, rep.p_value, True, rep.fit
            if best is None or rep.p_value > best[2]:
                best = (ell, p, rep.p_value, False, rep.fit)
    if best is None:
        raise ForecastError("no candidate model could be fitted")
    return best


def mixture_median(model: HmmModel, W: np.ndarray, x: Predictor) -> float:
    """Root of F(y) = 1/2 for the one-step predictive Gaussian mixture."""
    mus = np.array(
        [em.emission_mean(prm, fam, x) for fam, prm in model.emissions]
    )
    sigmas = np.array([prm.sigma for _, prm in model.emissions])
    lo = float(np.min(mus - 10 * sigmas))
    hi = float(np.max(mus + 10 * sigmas))
    f = lambda y: conditional_cdf(model, W, x, y) - 0.5
    if f(lo) > 0 or f(hi) < 0:
        raise ForecastError("median bracket failure for predictive mixture")
    root = optimize.brentq(f, lo, hi, xtol=MEDIAN_TOL / 10)
    if abs(conditional_cdf(model, W, x, root) - 0.5) >= MEDIAN_TOL:
        raise ForecastError("bisection did not reach the median tolerance")
    return float(root)


def predict_median(
    model: HmmModel,
    history: SeriesData,
    future_z: np.ndarray,
    horizon: int = SEASON,
):
    """Median one-step predictions for `horizon` days past the history.

    future_z holds the covariate rows of the prediction days.  Each
    predicted value is appended to the history before the next step, so
    lagged regressors stay causal.  Returns the differenced-scale
    predictions (undoing the seasonal difference is the caller's job).
    """
    future_z = np.asarray(future_z, dtype=float)
    if future_z.shape != (horizon, history.z.shape[1]):
        raise ForecastError("future covariates must be (horizon, r)")
    preds = np.empty(horizon)
    y = history.y.copy()
    z = history.z.copy()
    for d in range(horizon):
        data = SeriesData(y=y, z=z)
        dens, _, _ = emission_matrices(model, data)
        eta, _ = _forward(model, dens)
        W = predictive_weights(model, eta[-1])
        lags = y[-model.p :][::-1] if model.p > 0 else np.zeros(0)
        x = Predictor(lags=lags, covariates=future_z[d])
        preds[d] = mixture_median(model, W, x)
        y = np.append(y, preds[d])
        z = np.vstack([z, future_z[d]])
    return preds


def forecast_panel(
    panel: PanelData,
    train_end: int,
    horizon: int = SEASON,
    ell_range=(2, 3, 4),
    p_range=tuple(range(15)),
    statistic: str = AVG_CVM,
    B: int = 100,
    M: int = 50,
    alpha: float = 0.05,
    seed: int | None = None,
    em_config: EmConfig | None = None,
    workers: int = 1,
) -> list[ScanResult]:
    """Scan + predict every unit; held-out neighbor lags use predictions.

    train_end is the number of daily observations used for estimation.
    """
    n_units = panel.n_units

    def scan_unit(j):
        series = build_covariates(panel, j, through=train_end)
        unit_seed = None if seed is None else int(_substream(seed, 40, j).integers(2**31))
        try:
            ell, p, pv, ok, fit = scan_models(
                series, ell_range, p_range, statistic, B, M, alpha,
                seed=unit_seed, em_config=em_config,
            )
            return ScanResult(panel.units[j], ell, p, pv, ok, fit)
        except ForecastError as e:
            warnings.warn(f"unit {panel.units[j]}: {e}")
            return None

    if workers > 1:
        scans = Parallel(n_jobs=workers)(delayed(scan_unit)(j) for j in range(n_units))
    else:
        scans = [scan_unit(j) for j in range(n_units)]

    # incidence extended day by day with predictions, so neighbor lags of a
    # held-out day come from the previous day's predictions
    extended = panel.incidence[:train_end].copy()
    daily = np.zeros((horizon, n_units))
    hist_y = {}
    hist_z = {}
    for j, sc in enumerate(scans):
        if sc is not None:
            series = build_covariates(panel, j, through=train_end)
            hist_y[j] = series.y.copy()
            hist_z[j] = series.z.copy()
    for d in range(horizon):
        t = train_end + d  # 0-based index of the day being predicted
        new_row = np.zeros(n_units)
        for j, sc in enumerate(scans):
            if sc is None:
                continue
            model = sc.fit.model
            z2 = float(extended[t - 1] @ panel.adjacency[j])
            x_z = np.array([1.0, z2])
            data = SeriesData(y=hist_y[j], z=hist_z[j])
            dens, _, _ = emission_matrices(model, data)
            eta, _ = _forward(model, dens)
            W = predictive_weights(model, eta[-1])
            lags = hist_y[j][-model.p :][::-1] if model.p > 0 else np.zeros(0)
            diff_pred = mixture_median(model, W, Predictor(lags=lags, covariates=x_z))
            pred = extended[t - SEASON, j] + diff_pred
            daily[d, j] = pred
            new_row[j] = pred
            hist_y[j] = np.append(hist_y[j], diff_pred)
            hist_z[j] = np.vstack([hist_z[j], x_z])
        extended = np.vstack([extended, new_row])
    results = []
    for j, sc in enumerate(scans):
        if sc is None:
            continue
        sc.daily_predictions = daily[:, j].copy()
        sc.weekly_prediction = float(daily[:, j].sum())
        results.append(sc)
    return results


def results_table(results: list[ScanResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "unit": r.unit,
                "ell": r.ell,
                "p": r.p,
                "gof_pvalue": r.gof_pvalue,
                "adequate": r.adequate,
                "weekly_prediction": r.weekly_prediction,
            }
            for r in results
        ]
    )


def observed_vs_predicted(
    panel: PanelData, results: list[ScanResult], train_end: int, horizon: int = SEASON
) -> pd.DataFrame:
    """Scatter rows (unit, predicted weekly, observed weekly) when held-out data exist."""
    rows = []
    index = {u: i for i, u in enumerate(panel.units)}
    for r in results:
        j = index[r.unit]
        seg = panel.incidence[train_end : train_end + horizon, j]
        observed = float(seg.sum()) if seg.shape[0] == horizon else float("nan")
        rows.append(
            {"unit": r.unit, "predicted": r.weekly_prediction, "observed": observed}
        )
    return pd.DataFrame(rows)
