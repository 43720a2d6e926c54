"""Data-generating processes for the numerical experiments.

Four model families (Gaussian, Poisson, and their zero-inflated
counterparts) under two covariate designs: a stationary AR(2) with an
iid Exp(1) covariate, and an AR(1) with a linear trend entering through
the covariates.  Also provides the generic sampler from any fitted model,
shared with the parametric bootstrap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import emissions as em
from .emissions import EmissionParams
from .model import HmmModel, SeriesData

M1, M2, M3, M4 = "M1", "M2", "M3", "M4"

# 2x2 matrix shared by the one-non-zero-regime zero-inflated models and the
# two-regime plain models; regime 1 occupies a third of the time at
# stationarity.
Q_2 = np.array([[0.94, 0.06], [0.03, 0.97]])
# 3x3 matrix for zero-inflated models with two non-zero regimes.
Q_3 = np.array(
    [
        [0.25000, 0.25000, 0.50000],
        [0.37500, 0.58750, 0.03750],
        [0.37500, 0.01875, 0.60625],
    ]
)

DEFAULT_BURN_IN = 200
EXPLOSIVE_MEAN = 1e9


class DgpError(ValueError):
    pass


class SimulationOverflow(RuntimeError):
    pass


@dataclass(frozen=True)
class DgpSpec:
    model_id: str
    experiment: int
    ell1: int
    n: int
    seed: int | None = None

    def __post_init__(self):
        if self.model_id not in (M1, M2, M3, M4):
            raise DgpError(f"unknown model id {self.model_id!r}")
        if self.experiment not in (1, 2):
            raise DgpError("experiment must be 1 or 2")
        if self.ell1 not in (1, 2):
            raise DgpError("built-in DGPs have 1 or 2 non-zero regimes")

    @property
    def zero_inflated(self) -> bool:
        return self.model_id in (M3, M4)

    @property
    def gaussian(self) -> bool:
        return self.model_id in (M1, M3)


def _regime_params(spec: DgpSpec) -> list[EmissionParams]:
    sigmas = (0.8, 0.1)
    if spec.experiment == 1:
        if spec.gaussian:
            rows = [((0.5, 0.1), (-0.5, 0.1)), ((0.3, 0.6), (1.0, 0.5))]
        else:
            rows = [((0.5, 0.1), (2.0, 0.1)), ((0.3, 0.6), (1.0, 0.5))]
    else:
        rows = [((0.5,), (10.0, 5.0)), ((0.75,), (8.0, 4.0))]
    out = []
    for k in range(spec.ell1):
        phi, alpha = rows[k]
        sigma = sigmas[k] if spec.gaussian else None
        out.append(EmissionParams(phi=np.array(phi), alpha=np.array(alpha), sigma=sigma))
    return out


def builtin_model(spec: DgpSpec) -> HmmModel:
    """The exact experiment parameterization for a DGP spec."""
    family = em.GAUSSIAN_FAMILY if spec.gaussian else em.POISSON_LINEAR
    emis = []
    if spec.zero_inflated:
        emis.append((em.ZERO_FAMILY, EmissionParams()))
    for prm in _regime_params(spec):
        emis.append((family, prm))
    ell = len(emis)
    if ell == 1:
        Q = np.ones((1, 1))
    elif ell == 2:
        Q = Q_2
    else:
        Q = Q_3
    p = 2 if spec.experiment == 1 else 1
    return HmmModel(emissions=tuple(emis), Q=Q, p=p, r=2)


def poisson_constant_model(means, Q: np.ndarray | None = None) -> HmmModel:
    """Poisson HMM with constant regime means (log-linear, intercept only)."""
    means = np.atleast_1d(np.asarray(means, dtype=float))
    ell = means.size
    emis = tuple(
        (em.POISSON_LOG, EmissionParams(phi=np.zeros(0), alpha=np.array([np.log(mu)])))
        for mu in means
    )
    if Q is None:
        if ell == 1:
            Q = np.ones((1, 1))
        elif ell == 2:
            Q = Q_2
        elif ell == 3:
            Q = Q_3
        else:
            raise DgpError("supply Q explicitly for more than 3 regimes")
    return HmmModel(emissions=emis, Q=np.asarray(Q, float), p=0, r=1)


def exp1_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    z = np.ones((n, 2))
    z[:, 1] = rng.exponential(1.0, size=n)
    return z


def exp2_covariates(n: int) -> np.ndarray:
    z = np.ones((n, 2))
    z[:, 1] = np.arange(1, n + 1) / n
    return z


def simulate(
    model: HmmModel,
    n: int,
    z: np.ndarray,
    rng: np.random.Generator | int | None = None,
    burn_in: int = 0,
    presample: np.ndarray | None = None,
):
    """Draw a series of length n from the model given a covariate path.

    z must have n + burn_in rows; the first burn_in draws are discarded.
    presample seeds the p lags before the first draw (zeros by default).

    Returns (SeriesData, regime path) for the kept samples.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if burn_in < 0:
        raise DgpError("burn_in must be nonnegative")
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    total = n + burn_in
    if z.shape[0] != total:
        raise DgpError(f"need {total} covariate rows, got {z.shape[0]}")
    p = model.p
    lags = np.zeros(p)
    if presample is not None:
        presample = np.asarray(presample, dtype=float)
        if presample.shape != (p,):
            raise DgpError(f"presample must hold {p} lags")
        # presample[0] is y_{t-1}, the most recent value
        lags = presample.copy()
    y = np.empty(total)
    ell = model.ell
    # regime path first: searchsorted against cumulative rows beats
    # per-step categorical draws
    cumQ = np.cumsum(model.Q, axis=1)
    unif = rng.random(total + 1)
    states = np.empty(total, dtype=int)
    state = int(np.searchsorted(np.cumsum(model.eta0), unif[0], side="right"))
    for t in range(total):
        state = int(np.searchsorted(cumQ[state], unif[t + 1], side="right"))
        states[t] = min(state, ell - 1)
    kinds = [fam.kind for fam, _ in model.emissions]
    if p == 0:
        # emissions depend only on the regime and covariates: vectorize
        mus = np.empty((total, ell))
        for j, (fam, prm) in enumerate(model.emissions):
            mus[:, j] = em.mean_vector(prm, fam, np.empty((total, 0)), z)
        mu_path = mus[np.arange(total), states]
        if np.any(np.abs(mu_path) > EXPLOSIVE_MEAN):
            raise SimulationOverflow("emission mean overflow")
        y[:] = 0.0
        for j, (fam, prm) in enumerate(model.emissions):
            sel = states == j
            if fam.kind == em.GAUSSIAN:
                y[sel] = rng.normal(mu_path[sel], prm.sigma)
            elif fam.kind == em.POISSON:
                y[sel] = rng.poisson(mu_path[sel])
    else:
        normals = rng.standard_normal(total) if em.GAUSSIAN in kinds else None
        for t in range(total):
            fam, prm = model.emissions[states[t]]
            if fam.kind == em.ZERO:
                y[t] = 0.0
            else:
                if fam.kind == em.POISSON and fam.link == em.LOG_LINEAR:
                    mu = float(np.exp(prm.phi @ np.log1p(lags) + prm.alpha @ z[t]))
                else:
                    mu = float(prm.phi @ lags + prm.alpha @ z[t])
                if abs(mu) > EXPLOSIVE_MEAN:
                    raise SimulationOverflow(f"emission mean {mu:.3g} at t={t}")
                if fam.kind == em.GAUSSIAN:
                    y[t] = mu + prm.sigma * normals[t]
                else:
                    y[t] = rng.poisson(max(mu, em.MEAN_FLOOR))
            lags = np.concatenate([[y[t]], lags[:-1]])
    data = SeriesData(y=y[burn_in:], z=z[burn_in:])
    return data, states[burn_in:]


def simulate_dgp(spec: DgpSpec, burn_in: int | None = None):
    """Simulate one replication of a built-in DGP."""
    model = builtin_model(spec)
    rng = np.random.default_rng(spec.seed)
    if spec.experiment == 1:
        b = DEFAULT_BURN_IN if burn_in is None else burn_in
        z = exp1_covariates(spec.n + b, rng)
    else:
        # the trend covariate is t/n over the kept sample; no burn-in
        b = 0
        z = exp2_covariates(spec.n)
    return simulate(model, spec.n, z, rng=rng, burn_in=b)


def export_series(data: SeriesData, states: np.ndarray | None, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        r = data.z.shape[1]
        header = ["t", "y"] + [f"z{k+1}" for k in range(r)]
        if states is not None:
            header.append("true_regime")
        w.writerow(header)
        for t in range(data.n):
            row = [t + 1, repr(float(data.y[t]))] + [repr(float(v)) for v in data.z[t]]
            if states is not None:
                row.append(int(states[t]) + 1)
            w.writerow(row)
