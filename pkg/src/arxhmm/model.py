"""ARX hidden Markov model: filtering, smoothing, and the conditional mixture.

The model couples an unobserved Markov chain over regimes with per-regime
emission distributions conditioned on lagged responses and covariates.  All
recursions are carried in normalized form with accumulated log-normalizers,
so series up to n ~ 1e5 filter without underflow.

The likelihood conditions on the first p observations: sums run over
t = p+1..n, the standard ARX convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import emissions as em
from .emissions import EmissionFamily, EmissionParams, Predictor

ROW_SUM_TOL = 1e-12


class ModelError(ValueError):
    pass


class LikelihoodUnderflow(ArithmeticError):
    """All regimes assigned zero density at some step of a recursion."""

    def __init__(self, t: int):
        super().__init__(f"likelihood underflow at t={t}")
        self.t = t


@dataclass(frozen=True)
class HmmModel:
    """An ell-regime ARX-HMM with constant transition matrix.

    emissions: one (family, params) pair per regime; a zero-inflated model
    carries the point mass at regime index 0.
    """

    emissions: tuple
    Q: np.ndarray
    p: int
    r: int
    eta0: np.ndarray | None = None

    def __post_init__(self):
        emis = tuple((f, prm) for f, prm in self.emissions)
        object.__setattr__(self, "emissions", emis)
        Q = np.asarray(self.Q, dtype=float)
        object.__setattr__(self, "Q", Q)
        ell = len(emis)
        if ell < 1:
            raise ModelError("need at least one regime")
        if Q.shape != (ell, ell):
            raise ModelError(f"Q must be {ell}x{ell}, got {Q.shape}")
        if np.any(Q < 0) or np.any(np.abs(Q.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ModelError("Q rows must be nonnegative and sum to 1")
        if self.eta0 is None:
            eta0 = np.full(ell, 1.0 / ell)
        else:
            eta0 = np.asarray(self.eta0, dtype=float)
            if eta0.shape != (ell,) or np.any(eta0 < 0) or abs(eta0.sum() - 1.0) > ROW_SUM_TOL:
                raise ModelError("eta0 must be a probability vector over regimes")
        object.__setattr__(self, "eta0", eta0)
        if self.r < 1:
            raise ModelError("need at least the constant covariate (r >= 1)")
        for k, (fam, _) in enumerate(emis[1:], start=1):
            if fam.kind == em.ZERO:
                raise ModelError(f"point-mass regime must sit at index 0, found at {k}")

    @property
    def ell(self) -> int:
        return len(self.emissions)

    @property
    def zero_inflated(self) -> bool:
        return self.emissions[0][0].kind == em.ZERO

    def n_params(self) -> int:
        emis = sum(f.n_params(self.p, self.r) for f, _ in self.emissions)
        return emis + self.ell * (self.ell - 1)

    def transition(self, t: int) -> np.ndarray:
        """Per-t accessor; constant for now, kept for interface stability."""
        return self.Q

    def to_json(self) -> str:
        doc = {
            "ell": self.ell,
            "p": self.p,
            "r": self.r,
            "families": [
                {"kind": f.kind, "link": f.link} for f, _ in self.emissions
            ],
            "params": [
                {
                    "phi": list(prm.phi),
                    "alpha": list(prm.alpha),
                    "sigma": prm.sigma,
                }
                for _, prm in self.emissions
            ],
            "Q": [list(row) for row in self.Q],
            "eta0": list(self.eta0),
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "HmmModel":
        doc = json.loads(text)
        emis = tuple(
            (
                EmissionFamily(f["kind"], f.get("link")),
                EmissionParams(np.array(prm["phi"]), np.array(prm["alpha"]), prm["sigma"]),
            )
            for f, prm in zip(doc["families"], doc["params"])
        )
        return cls(
            emissions=emis,
            Q=np.array(doc["Q"]),
            p=doc["p"],
            r=doc["r"],
            eta0=np.array(doc["eta0"]),
        )


@dataclass(frozen=True)
class SeriesData:
    """Response vector plus covariate matrix with constant first column."""

    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        if y.ndim != 1 or z.shape[0] != y.shape[0]:
            raise ModelError("y must be 1-d and z aligned with it")
        if not np.all(z[:, 0] == 1.0):
            raise ModelError("first covariate column must be constantly 1")
        if np.any(~np.isfinite(y)) or np.any(~np.isfinite(z)):
            raise ModelError("missing or non-finite values are not supported")

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass
class FilterSmoother:
    """Forward/backward/smoothed quantities over the effective sample t0..n.

    Row t of each array corresponds to original time p+t (0-based).  Lam[t]
    holds the pair probabilities of (tau_{t-1}, tau_t); its first entry pairs
    the initial distribution with the first effective observation.
    """

    eta: np.ndarray
    eta_bar_star: np.ndarray
    lam: np.ndarray
    Lam: np.ndarray
    loglik: float


def lag_matrix(data: SeriesData, p: int) -> np.ndarray:
    """(m, p) matrix with row t holding (y_{t-1}, ..., y_{t-p})."""
    n = data.n
    if n <= p:
        raise ModelError(f"need more than p={p} observations, got {n}")
    m = n - p
    out = np.empty((m, p))
    for k in range(1, p + 1):
        out[:, k - 1] = data.y[p - k : n - k]
    return out


def design(data: SeriesData, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Lag matrix and aligned covariate block for the effective sample."""
    return lag_matrix(data, p), data.z[p:, :]


def emission_matrices(model: HmmModel, data: SeriesData):
    """Per-regime density, cdf, and left-cdf evaluated along the series.

    Returns (dens, cdf, cdf_left), each (m, ell).  For zero-inflated models
    the continuous regimes get density 0 at the atom y = 0: under the mixed
    reference measure a continuous law has no mass on the atom, which is what
    makes the zero regime observable.
    """
    lags, z = design(data, model.p)
    y = data.y[model.p :]
    m = y.shape[0]
    ell = model.ell
    dens = np.empty((m, ell))
    cdf = np.empty((m, ell))
    cdfl = np.empty((m, ell))
    for j, (fam, prm) in enumerate(model.emissions):
        mu = em.mean_vector(prm, fam, lags, z)
        dens[:, j] = em.density_given_mean(fam, mu, prm.sigma, y)
        cdf[:, j] = em.cdf_given_mean(fam, mu, prm.sigma, y)
        cdfl[:, j] = em.cdf_left_given_mean(fam, mu, prm.sigma, y)
    if model.zero_inflated:
        at_zero = y == 0.0
        for j, (fam, _) in enumerate(model.emissions):
            if fam.is_continuous:
                dens[at_zero, j] = 0.0
    return dens, cdf, cdfl


def _forward(model: HmmModel, dens: np.ndarray):
    m, ell = dens.shape
    eta = np.empty((m, ell))
    Q = model.Q
    prev = model.eta0
    loglik = 0.0
    for t in range(m):
        raw = (prev @ Q) * dens[t]
        norm = raw.sum()
        if norm <= 0 or not np.isfinite(norm):
            raise LikelihoodUnderflow(t)
        eta[t] = raw / norm
        loglik += np.log(norm)
        prev = eta[t]
    return eta, loglik


def forward_filter(model: HmmModel, data: SeriesData):
    """Filtered regime probabilities and the observed-data log-likelihood."""
    dens, _, _ = emission_matrices(model, data)
    return _forward(model, dens)


def _backward(model: HmmModel, dens: np.ndarray) -> np.ndarray:
    m, ell = dens.shape
    out = np.empty((m, ell))
    out[m - 1] = 1.0 / ell
    Q = model.Q
    for t in range(m - 2, -1, -1):
        raw = Q @ (dens[t + 1] * out[t + 1])
        norm = raw.sum()
        if norm <= 0 or not np.isfinite(norm):
            raise LikelihoodUnderflow(t)
        out[t] = raw / norm
    return out


def backward_weights(model: HmmModel, data: SeriesData) -> np.ndarray:
    """Normalized backward weights; terminal condition is uniform."""
    dens, _, _ = emission_matrices(model, data)
    return _backward(model, dens)


def smooth(model: HmmModel, data: SeriesData) -> FilterSmoother:
    """Full forward-backward pass with smoothed and pair probabilities."""
    dens, _, _ = emission_matrices(model, data)
    return smooth_from_density(model, dens)


def smooth_from_density(model: HmmModel, dens: np.ndarray) -> FilterSmoother:
    eta, loglik = _forward(model, dens)
    bar = _backward(model, dens)
    m, ell = dens.shape
    lam = eta * bar
    lam /= lam.sum(axis=1, keepdims=True)
    Q = model.Q
    Lam = np.empty((m, ell, ell))
    prev = model.eta0
    for t in range(m):
        pair = prev[:, None] * Q * (dens[t] * bar[t])[None, :]
        tot = pair.sum()
        if tot <= 0 or not np.isfinite(tot):
            raise LikelihoodUnderflow(t)
        Lam[t] = pair / tot
        prev = eta[t]
    return FilterSmoother(eta=eta, eta_bar_star=bar, lam=lam, Lam=Lam, loglik=loglik)


def predictive_weights(model: HmmModel, eta_prev: np.ndarray) -> np.ndarray:
    """Mixture weights of the one-step conditional law: W = eta_prev Q."""
    return np.asarray(eta_prev, dtype=float) @ model.Q


def predictive_weight_matrix(model: HmmModel, eta: np.ndarray) -> np.ndarray:
    """W_{t-1} rows for every effective t, with eta0 feeding the first row."""
    prev = np.vstack([model.eta0, eta[:-1]])
    return prev @ model.Q


def _mixture(model: HmmModel, W: np.ndarray, x: Predictor, y: float, which: str) -> float:
    fns = {"cdf": em.cdf, "cdf_left": em.cdf_left, "density": em.density}
    fn = fns[which]
    total = 0.0
    for j, (fam, prm) in enumerate(model.emissions):
        if W[j] != 0.0:
            total += W[j] * fn(prm, fam, x, y)
    return total


def conditional_cdf(model: HmmModel, W: np.ndarray, x: Predictor, y: float) -> float:
    return _mixture(model, W, x, y, "cdf")


def conditional_cdf_left(model: HmmModel, W: np.ndarray, x: Predictor, y: float) -> float:
    return _mixture(model, W, x, y, "cdf_left")


def conditional_density(model: HmmModel, W: np.ndarray, x: Predictor, y: float) -> float:
    return _mixture(model, W, x, y, "density")


def observed_loglik(model: HmmModel, data: SeriesData) -> float:
    _, loglik = forward_filter(model, data)
    return loglik
