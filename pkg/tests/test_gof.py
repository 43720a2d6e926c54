import numpy as np
import pytest
from scipy import stats

from arxhmm import emissions as em
from arxhmm.dgp import DgpSpec, builtin_model, poisson_constant_model, simulate, simulate_dgp
from arxhmm.em import EmConfig
from arxhmm.emissions import EmissionParams
from arxhmm.gof import (
    AVG_CVM,
    CVM,
    KS,
    averaged_cvm,
    averaged_cvm_from_u,
    bootstrap_pvalue,
    cvm_statistic,
    ks_statistic,
    model_is_continuous,
    pseudo_observations,
)
from arxhmm.model import HmmModel, SeriesData


def cvm_by_quadrature(u):
    """m * integral of (F_m(v) - v)^2 dv, segment-exact quadrature."""
    u = np.sort(np.asarray(u, float))
    m = u.shape[0]
    knots = np.concatenate([[0.0], u, [1.0]])
    nodes, weights = np.polynomial.legendre.leggauss(5)
    total = 0.0
    for i in range(len(knots) - 1):
        a, b = knots[i], knots[i + 1]
        if b <= a:
            continue
        Fm = i / m
        v = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        total += 0.5 * (b - a) * float(weights @ (Fm - v) ** 2)
    return m * total


def ks_by_grid(u):
    """sqrt(m) * sup |F_m - v| over a dense grid plus the jump endpoints."""
    u = np.sort(np.asarray(u, float))
    m = u.shape[0]
    grid = np.concatenate([np.linspace(0, 1, 10**6), u, np.nextafter(u, -1.0)])
    Fm = np.searchsorted(u, grid, side="right") / m
    return float(np.sqrt(m) * np.max(np.abs(Fm - grid)))


class TestStatistics:
    def test_cvm_single_point(self):
        assert cvm_statistic([0.5]) == pytest.approx(1.0 / 12.0, abs=1e-15)

    def test_cvm_perfect_grid(self):
        for m in (1, 7, 50):
            u = (np.arange(1, m + 1) - 0.5) / m
            assert cvm_statistic(u) == pytest.approx(1.0 / (12 * m), abs=1e-14)

    def test_cvm_quadrature_oracle(self, rng):
        for _ in range(5):
            u = rng.random(50)
            assert cvm_statistic(u) == pytest.approx(cvm_by_quadrature(u), abs=1e-6)

    def test_ks_single_point(self):
        assert ks_statistic([0.5]) == pytest.approx(0.5, abs=1e-15)

    def test_ks_perfect_grid(self):
        for m in (1, 7, 50):
            u = (np.arange(1, m + 1) - 0.5) / m
            assert ks_statistic(u) == pytest.approx(1.0 / (2 * np.sqrt(m)), abs=1e-14)

    def test_ks_grid_oracle(self, rng):
        for _ in range(5):
            u = rng.random(50)
            assert ks_statistic(u) == pytest.approx(ks_by_grid(u), abs=1e-9)

    def test_permutation_invariance(self, rng):
        u = rng.random(30)
        shuffled = rng.permutation(u)
        assert cvm_statistic(u) == cvm_statistic(shuffled)
        assert ks_statistic(u) == ks_statistic(shuffled)

    def test_lower_bounds(self, rng):
        for _ in range(20):
            u = rng.random(25)
            assert cvm_statistic(u) >= 1.0 / (12 * 25)
            assert ks_statistic(u) >= 1.0 / (2 * np.sqrt(25))


class TestAveragedStatistic:
    def test_pairwise_formula_oracle(self, rng):
        for _ in range(5):
            U = rng.random((20, 3))
            m, M = U.shape
            total = 0.0
            for j in range(M):
                for k in range(M):
                    pair = 0.0
                    for t in range(m):
                        pair += np.maximum(U[t, j], U[:, k]).sum()
                    total += (
                        m / 3.0
                        + 0.5 * (U[:, j] ** 2).sum()
                        + 0.5 * (U[:, k] ** 2).sum()
                        - pair / m
                    )
            assert averaged_cvm_from_u(U) == pytest.approx(total / M**2, abs=1e-8)

    def test_single_column_equals_cvm(self, rng):
        u = rng.random(40)
        assert averaged_cvm_from_u(u[:, None]) == pytest.approx(cvm_statistic(u), abs=1e-12)

    def test_continuous_model_independent_of_M(self):
        spec = DgpSpec("M1", 1, 2, 80, seed=3)
        data, _ = simulate_dgp(spec)
        model = builtin_model(spec)
        vals = [averaged_cvm(model, data, M, rng=np.random.default_rng(M)) for M in (1, 5, 50)]
        assert vals[0] == vals[1] == vals[2]

    def test_discrete_same_stream_matches_pseudo_obs(self):
        model = poisson_constant_model((1.0, 5.0))
        data, _ = simulate(model, 60, np.ones((60, 1)), rng=7)
        s_avg = averaged_cvm(model, data, 1, rng=np.random.default_rng(42))
        rng2 = np.random.default_rng(42)
        u = rng2.random((60, 1))[:, 0]  # same draw shape as averaged_cvm uses
        F, Fl = _pit(model, data)
        uu = Fl + u * (F - Fl)
        assert s_avg == pytest.approx(cvm_statistic(uu), abs=1e-12)


def _pit(model, data):
    from arxhmm.gof import _pit_matrix

    return _pit_matrix(model, data)


class TestPseudoObservations:
    def test_continuous_ignores_v(self):
        spec = DgpSpec("M1", 1, 2, 60, seed=1)
        data, _ = simulate_dgp(spec)
        model = builtin_model(spec)
        m = data.n - model.p
        u1 = pseudo_observations(model, data, v=np.zeros(m)).u
        u2 = pseudo_observations(model, data, v=np.ones(m)).u
        assert np.allclose(u1, u2, atol=1e-14)
        assert model_is_continuous(model)

    def test_degenerate_atom_returns_v(self):
        model = HmmModel(
            emissions=((em.ZERO_FAMILY, EmissionParams()),),
            Q=np.ones((1, 1)),
            p=0,
            r=1,
        )
        data = SeriesData(y=np.zeros(20), z=np.ones((20, 1)))
        v = np.random.default_rng(0).random(20)
        obs = pseudo_observations(model, data, v=v)
        assert np.allclose(obs.u, v, atol=1e-15)

    def test_range_and_shape(self):
        model = poisson_constant_model((2.0, 6.0))
        data, _ = simulate(model, 100, np.ones((100, 1)), rng=5)
        obs = pseudo_observations(model, data, rng=9)
        assert obs.u.shape == (100,)
        assert np.all((obs.u >= 0) & (obs.u <= 1))

    def test_uniform_under_true_model(self):
        model = poisson_constant_model((1.0, 5.0))
        data, _ = simulate(model, 2000, np.ones((2000, 1)), rng=21)
        u = pseudo_observations(model, data, rng=22).u
        assert stats.kstest(u, "uniform").statistic < 0.04


class TestBootstrap:
    def test_pvalue_resolution_and_determinism(self):
        spec = DgpSpec("M1", 1, 1, 80, seed=2)
        data, _ = simulate_dgp(spec)
        cfg = EmConfig(restarts=2, seed=0, max_iters=200)
        rep1 = bootstrap_pvalue(data, 1, 2, statistic=CVM, B=10, M=1, seed=7, em_config=cfg)
        rep2 = bootstrap_pvalue(data, 1, 2, statistic=CVM, B=10, M=1, seed=7, em_config=cfg)
        assert rep1.p_value == rep2.p_value
        assert rep1.observed == rep2.observed
        assert rep1.p_value in {k / 10 for k in range(11)}

    def test_workers_do_not_change_result(self):
        spec = DgpSpec("M1", 1, 1, 60, seed=4)
        data, _ = simulate_dgp(spec)
        cfg = EmConfig(restarts=1, seed=0, max_iters=150)
        seq = bootstrap_pvalue(data, 1, 2, statistic=KS, B=6, M=1, seed=3, em_config=cfg,
                               keep_boot_stats=True)
        par = bootstrap_pvalue(data, 1, 2, statistic=KS, B=6, M=1, seed=3, em_config=cfg,
                               keep_boot_stats=True, workers=2)
        assert np.allclose(seq.boot_stats, par.boot_stats, equal_nan=True)
        assert seq.p_value == par.p_value

    def test_report_serializes(self):
        spec = DgpSpec("M1", 1, 1, 60, seed=8)
        data, _ = simulate_dgp(spec)
        cfg = EmConfig(restarts=1, seed=0)
        rep = bootstrap_pvalue(data, 1, 2, statistic=AVG_CVM, B=4, M=5, seed=1, em_config=cfg,
                               keep_boot_stats=True)
        doc = rep.to_json()
        assert '"p_value"' in doc and '"boot_stats"' in doc
        assert 0.0 <= rep.p_value <= 1.0

    def test_null_pvalues_not_degenerate(self):
        # under the true 1-regime model the p-value should rarely be tiny
        hits = 0
        for k in range(10):
            spec = DgpSpec("M1", 1, 1, 80, seed=100 + k)
            data, _ = simulate_dgp(spec)
            cfg = EmConfig(restarts=1, seed=k)
            rep = bootstrap_pvalue(data, 1, 2, statistic=AVG_CVM, B=40, M=10, seed=k,
                                   em_config=cfg)
            hits += rep.p_value <= 0.05
        assert hits <= 3
