from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import solve_discrete_lyapunov

from bmdl.errors import NonStationary
from bmdl.model import Hyperparams
from bmdl.simulate import (
    DetectionTable,
    detection_rates,
    load_scenario,
    run_study,
    simulate_errors,
    simulate_series,
)

from conftest import SCENARIO_DIR, SEASONAL


def var_autocov(phi, cov, lags):
    """Analytic VAR autocovariances from the companion-form Lyapunov equation."""
    q, c, _ = phi.shape
    F = np.zeros((q * c, q * c))
    F[:c] = np.hstack(list(phi))
    F[c:, :-c] = np.eye((q - 1) * c)
    Q = np.zeros_like(F)
    Q[:c, :c] = cov
    G = solve_discrete_lyapunov(F, Q)
    return [G[:c, h * c:(h + 1) * c] for h in range(lags + 1)]


def ar_rho1(a):
    """Lag-1 autocorrelation of a univariate AR(3) by solving Yule-Walker forward."""
    A = np.array([[1 - a[1], -a[2]], [-(a[0] + a[2]), 1.0]])
    return np.linalg.solve(A, a[:2])[0]


class TestGenerator:
    def test_white_noise_moments(self):
        e = simulate_errors(np.zeros((0, 1, 1)), [[1.0]], 100_000, np.random.default_rng(1))
        assert abs(e.mean()) < 0.02
        assert abs(e.var() - 1) < 0.05

    def test_component_lag1_autocorrelation(self, table1):
        e = simulate_errors(table1.phi, table1.noise_cov, 100_000, np.random.default_rng(2))[:, 0]
        r1 = np.corrcoef(e[1:], e[:-1])[0, 1]
        G = var_autocov(table1.phi, table1.noise_cov, 1)
        assert abs(r1 - G[1][0, 0] / G[0][0, 0]) < 0.02
        assert abs(r1 - ar_rho1(np.array([0.2, 0.1, 0.05]))) < 0.02

    def test_var_autocovariances(self, table1):
        e = simulate_errors(table1.phi, table1.noise_cov, 100_000, np.random.default_rng(3))
        G = var_autocov(table1.phi, table1.noise_cov, 2)
        n = len(e)
        for h in range(3):
            emp = e[h:].T @ e[:n - h] / n
            np.testing.assert_allclose(emp, G[h], atol=0.25)

    def test_mean_path(self, table1):
        bi = replace(table1, noise_cov=np.eye(2) * 1e-12, phi=np.zeros((1, 2, 2)))
        x = simulate_series(bi, 0).values
        np.testing.assert_allclose(x[:12, 0], SEASONAL, atol=1e-5)
        np.testing.assert_allclose(x[149, 0] - x[149 - 12, 0], 6.0, atol=1e-5)

    def test_tmin_down_up_down(self, table1):
        path = table1.mean_path()[:, 1] - np.tile(SEASONAL, 50)
        levels = [path[0], path[200], path[340], path[500]]
        np.testing.assert_allclose(levels, [0, -6, 6, 0])

    def test_deterministic_per_seed(self, table1):
        a = simulate_series(table1, 5).values
        np.testing.assert_array_equal(a, simulate_series(table1, 5).values)
        assert not np.array_equal(a, simulate_series(table1, 6).values)

    def test_nonstationary(self, table1):
        with pytest.raises(NonStationary):
            simulate_series(replace(table1, phi=np.array([[[0.7, 0], [0, 0.7]],
                                                          [[0.4, 0], [0, 0.4]]])), 0)
        with pytest.raises(NonStationary):
            simulate_errors(np.zeros((1, 2, 2)), [[1.0, 2.0], [2.0, 1.0]], 10,
                            np.random.default_rng(0))


class TestDetectionRates:
    def test_all_exact(self):
        row = detection_rates([(150, 300, 450)] * 4, (150, 300, 450), 600, 3)
        assert row.tp_rates == (100.0, 100.0, 100.0)
        assert row.fp_rate == 0.0
        assert row.m_hat_mean == 3.0 and row.m_hat_se == 0.0

    def test_half(self):
        row = detection_rates([(150,), ()], (150, 300, 450), 600, 3)
        assert row.tp_rates == (50.0, 0.0, 0.0)
        assert row.m_hat_mean == 0.5
        assert row.fp_rate == 0.0

    def test_fp_denominator_excludes_true_times(self):
        row = detection_rates([(150, 200)], (150, 300, 450), 600, 3)
        assert row.fp_rate == pytest.approx(100.0 / (597 - 3))

    def test_near_miss_is_not_a_hit(self):
        assert detection_rates([(151,)], (150,), 600, 3).tp_rates == (0.0,)

    def test_failures_excluded(self):
        row = detection_rates([(150,), None], (150,), 600, 3)
        assert row.tp_rates == (100.0,) and row.failures == 1 and row.replications == 2


class TestStudy:
    def _truth(self, table1):
        return replace(table1, detectors=("truth",), replications=5)

    def test_truth_detector(self, table1):
        tab = run_study(self._truth(table1), seed=1)
        for k, true in enumerate(((150, 300, 450), (150, 300, 375))):
            row = tab.row("truth", k)
            assert row.tp_rates == (100.0,) * 3 and row.fp_rate == 0.0
            assert row.m_hat_mean == 3.0 and row.m_hat_se == 0.0

    def test_reproducible_across_workers(self, table1):
        sc = replace(table1, detectors=("bmdl", "bmdl+meta"), replications=4, iterations=300)
        a = run_study(sc, seed=7, workers=1)
        b = run_study(sc, seed=7, workers=2)
        assert a.to_csv() == b.to_csv()
        assert a.to_json() == b.to_json()

    def test_json_round_trip(self, table1):
        tab = run_study(replace(table1, detectors=("bmdl",), replications=3, iterations=200), 2)
        again = DetectionTable.from_dict(__import__("json").loads(tab.to_json()))
        assert again.to_csv() == tab.to_csv()

    def test_csv_shape(self, table1):
        lines = run_study(self._truth(table1), seed=1).to_csv().splitlines()
        assert lines[0] == "detector,component,statistic,time,value"
        assert "truth,0,tp_rate,150,100.0000" in lines

    def test_scenario_files_load(self):
        for name in ("table1_k2", "table2_k2", "table3_k2"):
            sc = load_scenario(SCENARIO_DIR / f"{name}.toml")
            assert sc.n == 600 and sc.shift == 6.0
            assert isinstance(sc.hyperparams, Hyperparams)
        assert load_scenario(SCENARIO_DIR / "table2_k2.toml").components == (1,)

    def test_overrides(self):
        sc = load_scenario(SCENARIO_DIR / "table1_k2.toml", replications=3, kappa=1.0)
        assert sc.replications == 3 and sc.shift == 3.0


@pytest.mark.slow
class TestPenaltyOrdering:
    def test_bic_flags_more_than_mdl_at_small_signal(self, table1):
        sc = replace(table1, kappa=1.0, detectors=("mdl", "bic"), replications=30)
        tab = run_study(sc, seed=3)
        assert tab.row("bic").m_hat_mean >= tab.row("mdl").m_hat_mean
