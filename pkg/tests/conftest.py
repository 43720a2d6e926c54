"""Shared oracles for the test suite.

The path-enumeration oracle computes the observed-data likelihood and the
smoothed/pair probabilities of small models by brute force over all regime
paths, with emission densities evaluated directly from scipy.  It shares no
recursion code with the package, so agreement is evidence, not tautology.
"""

import itertools

import numpy as np
import pytest
from scipy import stats

from arxhmm import emissions as em
from arxhmm.dgp import simulate
from arxhmm.emissions import EmissionParams
from arxhmm.model import HmmModel, LikelihoodUnderflow, SeriesData, forward_filter


def oracle_density(fam, prm, lags, zrow, y, zero_inflated):
    """Scalar emission density under the mixed reference measure."""
    if fam.kind == em.ZERO:
        return 1.0 if y == 0.0 else 0.0
    if fam.kind == em.GAUSSIAN:
        if zero_inflated and y == 0.0:
            return 0.0
        mu = float(prm.phi @ lags + prm.alpha @ zrow)
        return float(stats.norm.pdf(y, mu, prm.sigma))
    if fam.link == em.LOG_LINEAR:
        mu = float(np.exp(prm.phi @ np.log1p(lags) + prm.alpha @ zrow))
    else:
        mu = max(float(prm.phi @ lags + prm.alpha @ zrow), 1e-10)
    if y < 0 or y != np.floor(y):
        return 0.0
    return float(stats.poisson.pmf(y, mu))


def oracle_density_matrix(model, data):
    p = model.p
    m = data.n - p
    dens = np.empty((m, model.ell))
    for t in range(m):
        lags = data.y[p + t - 1 :: -1][:p] if p > 0 else np.zeros(0)
        for j, (fam, prm) in enumerate(model.emissions):
            dens[t, j] = oracle_density(
                fam, prm, lags, data.z[p + t], data.y[p + t], model.zero_inflated
            )
    return dens


def enumerate_paths(model, data):
    """Likelihood, smoothed, and pair probabilities by full path enumeration.

    Paths include the pre-observation state s_0 ~ eta0; observation t (0-based
    effective index) is emitted from s_{t+1}.
    """
    dens = oracle_density_matrix(model, data)
    m, ell = dens.shape
    lik = 0.0
    lam = np.zeros((m, ell))
    Lam = np.zeros((m, ell, ell))
    for path in itertools.product(range(ell), repeat=m + 1):
        w = model.eta0[path[0]]
        for t in range(m):
            w *= model.Q[path[t], path[t + 1]] * dens[t, path[t + 1]]
        if w == 0.0:
            continue
        lik += w
        for t in range(m):
            lam[t, path[t + 1]] += w
            Lam[t, path[t], path[t + 1]] += w
    return lik, lam / lik, Lam / lik


def random_oracle_instance(rng, allow_zero_inflated=True):
    """A small random model plus data simulated from it, underflow-free."""
    for _ in range(100):
        ell = int(rng.integers(1, 4))
        p = int(rng.integers(0, 3))
        r = int(rng.integers(1, 3))
        n = int(rng.integers(4, 8))
        if n - p < 2:
            continue
        zero_inflated = bool(allow_zero_inflated and ell >= 2 and rng.random() < 0.3)
        emis = []
        if zero_inflated:
            emis.append((em.ZERO_FAMILY, EmissionParams()))
        use_gaussian = rng.random(ell - len(emis)) < 0.5
        if p > 0:
            # Gaussian regimes can leave negative lags, which the log-linear
            # Poisson mean cannot take; keep autoregressive models single-family
            use_gaussian[:] = use_gaussian[0] if use_gaussian.size else True
        for g in use_gaussian:
            if g:
                prm = EmissionParams(
                    phi=0.3 * rng.standard_normal(p),
                    alpha=rng.standard_normal(r),
                    sigma=float(rng.uniform(0.5, 1.5)),
                )
                emis.append((em.GAUSSIAN_FAMILY, prm))
            else:
                prm = EmissionParams(
                    phi=0.2 * rng.random(p),
                    alpha=np.concatenate([[rng.uniform(0.0, 1.0)], 0.3 * rng.random(r - 1)]),
                )
                emis.append((em.POISSON_LOG, prm))
        Q = rng.dirichlet(np.ones(ell) * 2.0, size=ell)
        model = HmmModel(emissions=tuple(emis), Q=Q, p=p, r=r)
        z = np.ones((n, r))
        if r > 1:
            z[:, 1:] = rng.random((n, r - 1))
        try:
            data, _ = simulate(model, n, z, rng=rng)
            forward_filter(model, data)
        except (LikelihoodUnderflow, ValueError):
            continue
        return model, data
    raise RuntimeError("failed to draw a stable oracle instance")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
