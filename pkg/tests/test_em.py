import numpy as np
import pytest
from scipy import optimize

from arxhmm import emissions as em
from arxhmm.dgp import DgpSpec, builtin_model, simulate_dgp
from arxhmm.em import (
    DegenerateRegime,
    EmConfig,
    _em_single_run,
    _quantile_band_init,
    e_step,
    em_fit,
    m_step_gaussian,
    m_step_poisson,
    m_step_transition,
)
from arxhmm.emissions import EmissionParams
from arxhmm.model import HmmModel, SeriesData, design, forward_filter


def gaussian_series(rng, n=120):
    y = np.empty(n)
    y[0] = 0.0
    state = 0
    for t in range(1, n):
        if rng.random() < 0.1:
            state = 1 - state
        mu = (0.2 * y[t - 1] - 0.5) if state == 0 else (0.1 * y[t - 1] + 2.0)
        y[t] = mu + (0.7 if state == 0 else 0.3) * rng.standard_normal()
    z = np.column_stack([np.ones(n), rng.random(n)])
    return SeriesData(y=y, z=z)


def weighted_gaussian_loglik(data, p, w, phi, alpha, sigma):
    lags, z = design(data, p)
    mu = lags @ phi + z @ alpha
    resid = data.y[p:] - mu
    return float(w @ (-np.log(sigma) - resid**2 / (2 * sigma**2)))


class TestGaussianMStep:
    def test_intercept_only_unweighted(self, rng):
        y = rng.standard_normal(40) + 1.5
        data = SeriesData(y=y, z=np.ones((40, 1)))
        prm = m_step_gaussian(data, 0, np.ones(40))
        assert prm.alpha[0] == pytest.approx(y.mean(), rel=1e-12)
        assert prm.sigma == pytest.approx(y.std(), rel=1e-12)

    def test_single_effective_point(self, rng):
        y = rng.standard_normal(10)
        data = SeriesData(y=y, z=np.ones((10, 1)))
        w = np.zeros(10)
        w[0] = 1.0
        prm = m_step_gaussian(data, 0, w)
        assert prm.alpha[0] == pytest.approx(y[0], abs=1e-10)

    def test_degenerate_weights_rejected(self, rng):
        data = SeriesData(y=rng.standard_normal(10), z=np.ones((10, 1)))
        with pytest.raises(DegenerateRegime):
            m_step_gaussian(data, 0, np.zeros(10))

    def test_matches_numeric_optimizer(self, rng):
        data = gaussian_series(rng, n=80)
        w = rng.random(79)
        prm = m_step_gaussian(data, 1, w)

        def neg(theta):
            return -weighted_gaussian_loglik(
                data, 1, w, theta[:1], theta[1:3], np.exp(theta[3])
            )

        x0 = np.array([0.0, 0.0, 0.0, 0.0])
        res = optimize.minimize(neg, x0, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
        assert prm.phi[0] == pytest.approx(res.x[0], abs=1e-6)
        assert prm.alpha[0] == pytest.approx(res.x[1], abs=1e-6)
        assert prm.alpha[1] == pytest.approx(res.x[2], abs=1e-6)
        assert prm.sigma == pytest.approx(np.exp(res.x[3]), abs=1e-6)


class TestPoissonMStep:
    def test_loglinear_intercept_only(self, rng):
        y = rng.poisson(3.0, size=50).astype(float)
        data = SeriesData(y=y, z=np.ones((50, 1)))
        prm = m_step_poisson(data, 0, np.ones(50), em.LOG_LINEAR)
        assert prm.alpha[0] == pytest.approx(np.log(y.mean()), abs=1e-8)

    def test_all_zero_clamped(self):
        data = SeriesData(y=np.zeros(30), z=np.ones((30, 1)))
        with pytest.warns(UserWarning, match="degenerate"):
            prm = m_step_poisson(data, 0, np.ones(30), em.LOG_LINEAR)
        assert prm.alpha[0] == -30.0

    def test_loglinear_matches_numeric_optimizer(self, rng):
        n = 80
        y = np.zeros(n)
        for t in range(1, n):
            mu = np.exp(0.3 * np.log1p(y[t - 1]) + 0.5)
            y[t] = rng.poisson(mu)
        data = SeriesData(y=y, z=np.ones((n, 1)))
        w = rng.random(n - 1)
        prm = m_step_poisson(data, 1, w, em.LOG_LINEAR)

        lags, z = design(data, 1)
        X = np.hstack([np.log1p(lags), z])
        yy = data.y[1:]

        def neg(beta):
            mu = np.exp(X @ beta)
            return -float(w @ (yy * np.log(np.maximum(mu, 1e-300)) - mu))

        res = optimize.minimize(neg, np.zeros(2), method="BFGS",
                                options={"gtol": 1e-12, "maxiter": 5000})
        assert prm.phi[0] == pytest.approx(res.x[0], abs=1e-5)
        assert prm.alpha[0] == pytest.approx(res.x[1], abs=1e-5)

    def test_linear_matches_numeric_optimizer(self, rng):
        n = 150
        y = np.zeros(n)
        for t in range(1, n):
            mu = 0.4 * y[t - 1] + 2.0
            y[t] = rng.poisson(mu)
        data = SeriesData(y=y, z=np.ones((n, 1)))
        w = 0.5 + 0.5 * rng.random(n - 1)
        prm = m_step_poisson(data, 1, w, em.LINEAR)

        lags, z = design(data, 1)
        X = np.hstack([lags, z])
        yy = data.y[1:]

        def neg(beta):
            mu = np.maximum(X @ beta, 1e-10)
            return -float(w @ (yy * np.log(mu) - mu))

        def grad(beta):
            mu = np.maximum(X @ beta, 1e-10)
            return -(X.T @ (w * (yy / mu - 1.0)))

        res = optimize.minimize(
            neg, np.array([0.2, 1.0]), jac=grad, method="trust-constr",
            bounds=optimize.Bounds([0.0, 1e-6], [np.inf, np.inf]),
            constraints=[optimize.LinearConstraint(np.array([[1.0, 0.0]]), -np.inf, 1 - 1e-6)],
            options={"gtol": 1e-12, "xtol": 1e-14},
        )
        assert prm.phi[0] == pytest.approx(res.x[0], abs=1e-5)
        assert prm.alpha[0] == pytest.approx(res.x[1], abs=1e-5)

    def test_linear_respects_constraints(self, rng):
        n = 60
        y = rng.poisson(1.0, size=n).astype(float)
        data = SeriesData(y=y, z=np.ones((n, 1)))
        prm = m_step_poisson(data, 2, rng.random(n - 2), em.LINEAR)
        assert np.all(prm.phi >= 0)
        assert prm.phi.sum() <= 1 - 1e-6 + 1e-12
        assert prm.alpha[0] >= 1e-6


class TestTransitionMStep:
    def test_uniform(self):
        Lam = np.full((10, 3, 3), 1.0 / 9.0)
        assert np.allclose(m_step_transition(Lam), 1.0 / 3.0)

    def test_concentrated(self):
        Lam = np.zeros((5, 2, 2))
        Lam[:, 0, 1] = 1.0
        with pytest.warns(UserWarning):
            Q = m_step_transition(Lam)
        assert np.allclose(Q[0], [0.0, 1.0])

    def test_zero_row_keeps_previous(self):
        Lam = np.zeros((5, 2, 2))
        Lam[:, 0, 0] = 1.0
        prev = np.array([[0.5, 0.5], [0.3, 0.7]])
        with pytest.warns(UserWarning, match="zero mass"):
            Q = m_step_transition(Lam, prev_Q=prev)
        assert np.allclose(Q[1], prev[1])

    def test_closed_form_and_local_optimality(self, rng):
        Lam = rng.random((20, 3, 3))
        Lam /= Lam.sum(axis=(1, 2), keepdims=True)
        Q = m_step_transition(Lam)
        counts = Lam.sum(axis=0)
        want = counts / counts.sum(axis=1, keepdims=True)
        assert np.allclose(Q, want, atol=1e-12)

        def trans_term(Qc):
            return float((counts * np.log(Qc)).sum())

        base = trans_term(Q)
        for _ in range(100):
            pert = Q + 0.05 * rng.standard_normal((3, 3))
            pert = np.abs(pert) + 1e-6
            pert /= pert.sum(axis=1, keepdims=True)
            assert trans_term(pert) <= base + 1e-12


class TestEmFit:
    def test_monotone_loglik(self, rng):
        for _ in range(10):
            data = gaussian_series(rng, n=100)
            init = _quantile_band_init(data, 2, 1, em.GAUSSIAN_FAMILY, False, rng, 0.0)
            history = []
            _em_single_run(data, init, em.GAUSSIAN_FAMILY, EmConfig(max_iters=80), history)
            diffs = np.diff(history)
            assert np.all(diffs >= -1e-7)

    def test_stationary_scores(self, rng):
        data = gaussian_series(rng, n=150)
        fit = em_fit(data, 2, 1, config=EmConfig(restarts=3, seed=0))
        fs = e_step(fit.model, data)
        lags, z = design(data, 1)
        X = np.hstack([lags, z])
        y = data.y[1:]
        for j in range(2):
            w = fs.lam[:, j]
            prm = m_step_gaussian(data, 1, w)
            mu = X @ prm.coef
            resid = y - mu
            g_coef = X.T @ (w * resid) / prm.sigma**2
            g_sigma = float(w @ (resid**2 / prm.sigma**3 - 1.0 / prm.sigma))
            assert np.max(np.abs(g_coef)) < 1e-6
            assert abs(g_sigma) < 1e-6

    def test_single_regime_recovery(self, rng):
        n = 1000
        y = 1.2 + 0.9 * rng.standard_normal(n)
        data = SeriesData(y=y, z=np.ones((n, 1)))
        fit = em_fit(data, 1, 0, config=EmConfig(seed=0))
        _, prm = fit.model.emissions[0]
        assert abs(prm.alpha[0] - 1.2) < 3 * 0.9 / np.sqrt(n)
        assert abs(prm.sigma - 0.9) < 3 * 0.9 / np.sqrt(2 * n)
        assert np.array_equal(fit.model.Q, np.ones((1, 1)))

    def test_beats_true_parameters(self):
        spec = DgpSpec("M1", 1, 2, 250, seed=11)
        data, _ = simulate_dgp(spec)
        truth = builtin_model(spec)
        _, true_ll = forward_filter(truth, data)
        fit = em_fit(data, 2, 2, config=EmConfig(restarts=5, seed=3))
        assert fit.loglik >= true_ll - 1e-6

    def test_labels_sorted_by_intercept(self, rng):
        data = gaussian_series(rng, n=200)
        for seed in (1, 2):
            fit = em_fit(data, 2, 1, config=EmConfig(restarts=3, seed=seed))
            intercepts = [prm.alpha[0] for _, prm in fit.model.emissions]
            assert intercepts == sorted(intercepts)

    def test_zero_inflated_pins_atom(self, rng):
        spec = DgpSpec("M3", 1, 1, 200, seed=5)
        data, _ = simulate_dgp(spec)
        fit = em_fit(data, 2, 2, zero_inflated=True, config=EmConfig(restarts=3, seed=0))
        assert fit.model.zero_inflated
        fs = e_step(fit.model, data)
        at_zero = data.y[2:] == 0.0
        assert np.allclose(fs.lam[at_zero, 0], 1.0, atol=1e-8)
        assert np.allclose(fs.lam[~at_zero, 0], 0.0, atol=1e-8)

    def test_too_short_series(self):
        data = SeriesData(y=np.zeros(5), z=np.ones((5, 1)))
        with pytest.raises(ValueError, match="too short"):
            em_fit(data, 3, 1)

    def test_zero_inflated_needs_two(self, rng):
        data = SeriesData(y=np.abs(rng.standard_normal(50)), z=np.ones((50, 1)))
        with pytest.raises(ValueError):
            em_fit(data, 1, 0, zero_inflated=True)
