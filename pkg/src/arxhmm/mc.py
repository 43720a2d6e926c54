"""Monte Carlo harness: power studies, selection studies, and power curves.

Each study is a deterministic function of its master seed: replication k
draws every random input from substreams keyed by (seed, k), so results do
not depend on execution order or the degree of parallelism.  Per-replication
records are persisted as CSV so every aggregate is re-derivable.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import emissions as em
from .criteria import information_criteria, select_by_gof, select_by_ic
from .dgp import (
    DgpSpec,
    SimulationOverflow,
    builtin_model,
    exp1_covariates,
    exp2_covariates,
    poisson_constant_model,
    simulate,
    DEFAULT_BURN_IN,
)
from .em import EmConfig, EmError, em_fit
from .gof import AVG_CVM, _substream, bootstrap_pvalue
from .model import LikelihoodUnderflow

ALPHA = 0.05

# Desk-scale defaults; the paper-scale runs use N=1000.
DEFAULT_N_REPS = 200
DEFAULT_B = 100

GOF_METHOD = "gof"
IC_METHODS = ("aic", "bic", "icl")


@dataclass
class McScenario:
    dgp: DgpSpec
    ell_test: tuple = (1,)
    statistic: str = AVG_CVM
    M: int = 50
    N: int = DEFAULT_N_REPS
    B: int = DEFAULT_B
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.N < 1 or self.B < 1:
            raise ValueError("N and B must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ell_test"] = list(self.ell_test)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "McScenario":
        d = dict(d)
        d["dgp"] = DgpSpec(**d["dgp"])
        if "ell_test" in d:
            d["ell_test"] = tuple(d["ell_test"])
        return cls(**d)


def _mc_em_config(seed) -> EmConfig:
    # lighter than the estimation defaults: restarts dominate study runtime
    return EmConfig(max_iters=300, loglik_tol=1e-7, restarts=3, seed=seed)


def _simulate_replication(spec: DgpSpec, seed, k: int):
    model = builtin_model(spec)
    rng = _substream(seed, 10, k)
    if spec.experiment == 1:
        z = exp1_covariates(spec.n + DEFAULT_BURN_IN, rng)
        return simulate(model, spec.n, z, rng=rng, burn_in=DEFAULT_BURN_IN)
    z = exp2_covariates(spec.n)
    return simulate(model, spec.n, z, rng=rng)


def _null_family(spec: DgpSpec):
    return em.GAUSSIAN_FAMILY if spec.gaussian else em.POISSON_LINEAR


def _candidate(spec_zero_inflated: bool, ell: int):
    """Candidate model shape for a tested regime count.

    For zero-inflated DGPs, ell = 1 means a plain one-regime model (no
    atom); ell >= 2 keeps the atom plus ell - 1 emission regimes.
    """
    if spec_zero_inflated and ell >= 2:
        return True
    return False


def _power_replication(scenario: McScenario, k: int) -> dict:
    spec = scenario.dgp
    row = {"replication": k}
    try:
        data, _ = _simulate_replication(spec, scenario.seed, k)
    except SimulationOverflow as e:
        row["failed"] = repr(e)
        return row
    family = _null_family(spec)
    for ell in scenario.ell_test:
        zi = _candidate(spec.zero_inflated, ell)
        seed_lk = int(_substream(scenario.seed, 11, k, ell).integers(2**31))
        try:
            rep = bootstrap_pvalue(
                data,
                ell,
                builtin_model(spec).p,
                family=family,
                zero_inflated=zi,
                statistic=scenario.statistic,
                B=scenario.B,
                M=scenario.M,
                seed=seed_lk,
                em_config=_mc_em_config(seed_lk),
            )
            row[f"pvalue_ell{ell}"] = rep.p_value
        except (EmError, LikelihoodUnderflow, ValueError) as e:
            row[f"error_ell{ell}"] = repr(e)
    return row


def _aggregate_power(records: list[dict], ells) -> pd.DataFrame:
    df = pd.DataFrame.from_records(records)
    rows = []
    for ell in ells:
        col = f"pvalue_ell{ell}"
        pv = df[col].dropna() if col in df else pd.Series(dtype=float)
        n_ok = len(pv)
        rate = float((pv < ALPHA).mean()) if n_ok else float("nan")
        se = float(np.sqrt(rate * (1 - rate) / n_ok)) if n_ok else float("nan")
        rows.append(
            {
                "ell": ell,
                "n_ok": n_ok,
                "n_failed": len(df) - n_ok,
                "rejection_rate": rate,
                "rejection_se": se,
            }
        )
    return pd.DataFrame(rows)


def _run_replications(fn, N: int, workers: int):
    if workers > 1:
        return Parallel(n_jobs=workers)(delayed(fn)(k) for k in range(N))
    return [fn(k) for k in range(N)]


def run_power_study(scenario: McScenario, out_dir=None):
    """Rejection rate of the 5%-level test at each tested regime count."""
    t0 = time.time()
    records = _run_replications(
        lambda k: _power_replication(scenario, k), scenario.N, scenario.workers
    )
    table = _aggregate_power(records, scenario.ell_test)
    if out_dir is not None:
        _persist(out_dir, "power_study", scenario.to_dict(), records, table, t0)
    return table, records


def _selection_replication(scenario: McScenario, methods, ell_range, k: int) -> dict:
    spec = scenario.dgp
    row = {"replication": k}
    try:
        data, _ = _simulate_replication(spec, scenario.seed, k)
    except SimulationOverflow as e:
        row["failed"] = repr(e)
        return row
    family = _null_family(spec)
    p = builtin_model(spec).p
    ic_methods = [m for m in methods if m in IC_METHODS]
    if ic_methods:
        rows = []
        for ell in ell_range:
            zi = _candidate(spec.zero_inflated, ell)
            seed_lk = int(_substream(scenario.seed, 12, k, ell).integers(2**31))
            try:
                fit = em_fit(
                    data, ell, p, family=family, zero_inflated=zi,
                    config=_mc_em_config(seed_lk),
                )
                rows.append(information_criteria(fit, data))
            except (EmError, LikelihoodUnderflow, ValueError) as e:
                warnings.warn(f"rep {k}: fit failed at ell={ell}: {e!r}")
        if rows:
            for m in ic_methods:
                row[m] = select_by_ic(rows, m)
    if GOF_METHOD in methods:
        seed_g = int(_substream(scenario.seed, 13, k).integers(2**31))
        try:
            # zero-inflated DGPs: candidate ladder starts at the plain
            # one-regime model, matching the power experiments
            if spec.zero_inflated:
                sel_pv: dict = {}
                chosen = None
                for ell in ell_range:
                    zi = _candidate(True, ell)
                    try:
                        rep = bootstrap_pvalue(
                            data, ell, p, family=family, zero_inflated=zi,
                            statistic=scenario.statistic, B=scenario.B, M=scenario.M,
                            seed=int(_substream(seed_g, 4, ell).integers(2**31)),
                            em_config=_mc_em_config(seed_g),
                        )
                    except (EmError, LikelihoodUnderflow, ValueError):
                        continue
                    sel_pv[ell] = rep.p_value
                    if rep.p_value > ALPHA:
                        chosen = ell
                        break
                if chosen is None and sel_pv:
                    chosen = max(sel_pv, key=lambda e: sel_pv[e])
                if chosen is not None:
                    row[GOF_METHOD] = chosen
            else:
                sel = select_by_gof(
                    data, ell_range, p, family=family,
                    statistic=scenario.statistic, B=scenario.B, M=scenario.M,
                    seed=seed_g, em_config=_mc_em_config(seed_g),
                )
                row[GOF_METHOD] = sel.selected
        except (EmError, LikelihoodUnderflow, ValueError) as e:
            row["gof_error"] = repr(e)
    return row


def _aggregate_selection(records: list[dict], methods, ell_range) -> pd.DataFrame:
    df = pd.DataFrame.from_records(records)
    rows = []
    for m in methods:
        counts = df[m].value_counts() if m in df else pd.Series(dtype=int)
        total = int(counts.sum())
        row = {"method": m, "n_ok": total}
        for ell in ell_range:
            row[f"freq_ell{ell}"] = float(counts.get(ell, 0)) / total if total else float("nan")
        rows.append(row)
    return pd.DataFrame(rows)


def run_selection_study(
    scenario: McScenario,
    methods=(GOF_METHOD, "aic", "bic", "icl"),
    ell_range=(1, 2, 3, 4),
    out_dir=None,
):
    """Frequency with which each method picks each regime count."""
    t0 = time.time()
    records = _run_replications(
        lambda k: _selection_replication(scenario, methods, ell_range, k),
        scenario.N,
        scenario.workers,
    )
    table = _aggregate_selection(records, methods, ell_range)
    if out_dir is not None:
        _persist(out_dir, "selection_study", scenario.to_dict(), records, table, t0)
    return table, records


def _poisson_selection_replication(means, n, methods, ell_range, statistic, B, M, seed, k) -> dict:
    model = poisson_constant_model(means)
    row = {"replication": k}
    try:
        data, _ = simulate(model, n, np.ones((n + 100, 1)), rng=_substream(seed, 14, k),
                           burn_in=100)
    except SimulationOverflow as e:
        row["failed"] = repr(e)
        return row
    ic_methods = [m for m in methods if m in IC_METHODS]
    if ic_methods:
        rows = []
        for ell in ell_range:
            seed_lk = int(_substream(seed, 15, k, ell).integers(2**31))
            try:
                fit = em_fit(data, ell, 0, family=em.POISSON_LOG,
                             config=_mc_em_config(seed_lk))
                rows.append(information_criteria(fit, data))
            except (EmError, LikelihoodUnderflow, ValueError) as e:
                warnings.warn(f"rep {k}: fit failed at ell={ell}: {e!r}")
        if rows:
            for m in ic_methods:
                row[m] = select_by_ic(rows, m)
    if GOF_METHOD in methods:
        seed_g = int(_substream(seed, 16, k).integers(2**31))
        try:
            sel = select_by_gof(
                data, ell_range, 0, family=em.POISSON_LOG, statistic=statistic,
                B=B, M=M, seed=seed_g, em_config=_mc_em_config(seed_g),
            )
            row[GOF_METHOD] = sel.selected
        except (EmError, LikelihoodUnderflow, ValueError) as e:
            row["gof_error"] = repr(e)
    return row


def run_poisson_selection_study(
    means,
    n: int,
    methods=("aic", "bic", "icl"),
    ell_range=(1, 2, 3, 4),
    statistic: str = AVG_CVM,
    N: int = 100,
    B: int = DEFAULT_B,
    M: int = 50,
    seed: int = 0,
    workers: int = 1,
    out_dir=None,
):
    """Selection frequencies for a constant-mean Poisson HMM truth."""
    t0 = time.time()
    records = _run_replications(
        lambda k: _poisson_selection_replication(
            means, n, methods, ell_range, statistic, B, M, seed, k
        ),
        N,
        workers,
    )
    table = _aggregate_selection(records, methods, ell_range)
    if out_dir is not None:
        cfg = {"means": list(means), "n": n, "methods": list(methods), "N": N,
               "B": B, "M": M, "statistic": statistic, "seed": seed}
        _persist(out_dir, "poisson_selection_study", cfg, records, table, t0)
    return table, records


def _power_curve_cell(base_means, lam, n, null_ell, N, B, M, statistic, seed) -> dict:
    means = list(base_means) + [lam]
    model = poisson_constant_model(means)
    rejections = 0
    n_ok = 0
    for k in range(N):
        rng = _substream(seed, 20, n, k)
        try:
            data, _ = simulate(model, n, np.ones((n + 100, 1)), rng=rng, burn_in=100)
        except SimulationOverflow:
            continue
        seed_k = int(_substream(seed, 21, n, k).integers(2**31))
        try:
            rep = bootstrap_pvalue(
                data, null_ell, 0, family=em.POISSON_LOG,
                statistic=statistic, B=B, M=M, seed=seed_k,
                em_config=_mc_em_config(seed_k),
            )
        except (EmError, LikelihoodUnderflow, ValueError):
            continue
        n_ok += 1
        rejections += 1 if rep.p_value < ALPHA else 0
    rate = rejections / n_ok if n_ok else float("nan")
    return {
        "lambda": lam,
        "n": n,
        "null_ell": null_ell,
        "n_ok": n_ok,
        "rejection_rate": rate,
        "rejection_se": float(np.sqrt(rate * (1 - rate) / n_ok)) if n_ok else float("nan"),
    }


def power_curve(
    lambda_grid,
    n_grid,
    base_means=(1.0,),
    null_ell: int | None = None,
    N: int = DEFAULT_N_REPS,
    B: int = DEFAULT_B,
    M: int = 25,
    statistic: str = AVG_CVM,
    seed: int = 0,
    workers: int = 1,
    out_dir=None,
) -> pd.DataFrame:
    """Rejection rate vs. the mean of the extra regime, per sample size.

    The true model has regimes at base_means plus the grid value; the null
    hypothesis fixes null_ell regimes (default: len(base_means)).
    """
    if null_ell is None:
        null_ell = len(base_means)
    t0 = time.time()
    cells = [(lam, n) for n in n_grid for lam in lambda_grid]
    fn = lambda cell: _power_curve_cell(
        base_means, cell[0], cell[1], null_ell, N, B, M, statistic, seed
    )
    if workers > 1:
        rows = Parallel(n_jobs=workers)(delayed(fn)(c) for c in cells)
    else:
        rows = [fn(c) for c in cells]
    table = pd.DataFrame(rows)
    if out_dir is not None:
        cfg = {
            "lambda_grid": list(lambda_grid), "n_grid": list(n_grid),
            "base_means": list(base_means), "null_ell": null_ell,
            "N": N, "B": B, "M": M, "statistic": statistic, "seed": seed,
        }
        _persist(out_dir, "power_curve", cfg, rows, table, t0)
    return table


def _persist(out_dir, name, config, records, table: pd.DataFrame, t0: float) -> None:
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame.from_records(records).to_csv(out / f"{name}_replications.csv", index=False)
    table.to_csv(out / f"{name}.csv", index=False)
    manifest = {
        "study": name,
        "config": config,
        "wall_time_s": time.time() - t0,
        "versions": _versions(),
    }
    with open(out / f"{name}_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def _versions() -> dict:
    import scipy

    from . import __version__

    return {
        "arxhmm": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }
