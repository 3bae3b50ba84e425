"""Ensemble martingale tests and structure scans."""

import numpy as np
import pytest

from fpplab.market import MarketSpec, TimeGrid, brownian_batch, evolve_log_wealth_batch
from fpplab.mixture import MixtureFpp, RiskMixture, VolatilityChoice
from fpplab.verify import (VERDICT_MARTINGALE, VERDICT_SUPER_STRICT,
                           VERDICT_VIOLATION, martingale_test, structure_scan)


def single_atom_setup(lam=0.2, gamma=0.5):
    market = MarketSpec(n_stocks=1, d_w=1, d_wperp=0, sigma=0.2, mu=0.2 * lam)
    mix = RiskMixture.single(gamma)
    return market, MixtureFpp(mix, VolatilityChoice.zero(), market)


class InflatedFpp:
    """A deliberately wrong evaluator: the true criterion times e^{0.05 t}."""

    def __init__(self, fpp, grid):
        self.fpp = fpp
        self.bump = np.exp(0.05 * grid.times)

    def u0(self, x):
        return self.fpp.u0(x)

    def utility_paths(self, grid, dw, dwperp, log_x):
        return self.fpp.utility_paths(grid, dw, dwperp, log_x) * self.bump


def test_martingale_at_the_optimiser():
    market, fpp = single_atom_setup()
    grid = TimeGrid.regular(1.0, 1 / 12)
    report = martingale_test(fpp, lambda k, t, x: fpp.sp_star(t), market,
                             grid=grid, n_paths=20_000, seed=7)
    assert report.verdict == VERDICT_MARTINGALE
    assert report.reference == pytest.approx(2.0)
    assert np.all(report.se[1:] > 0.0)
    assert np.isfinite(report.kurtosis_terminal)
    assert np.all(report.margins()[1:] >= 0.0)


def test_null_portfolio_tracks_exact_decay():
    # with no allocation and no free loadings the criterion is deterministic:
    # U_t = U_0 exp(v t) with v = -(1-g)/(2g) lam^2
    market, fpp = single_atom_setup()
    grid = TimeGrid.regular(1.0, 1 / 12)
    report = martingale_test(fpp, lambda k, t, x: np.zeros(1), market,
                             grid=grid, n_paths=50, seed=1, mode="supermartingale")
    assert report.verdict == VERDICT_SUPER_STRICT
    expected = 2.0 * np.exp(-0.02 * grid.times)
    np.testing.assert_allclose(report.mean, expected, rtol=1e-12)
    assert np.all(report.se <= 1e-7)  # identical paths up to float noise


def test_intermediate_allocation_is_strict_supermartingale():
    market, fpp = single_atom_setup(lam=1.0)
    grid = TimeGrid.regular(1.0, 1 / 12)
    report = martingale_test(fpp, lambda k, t, x: 0.5 * fpp.sp_star(t), market,
                             grid=grid, n_paths=20_000, seed=3,
                             mode="supermartingale")
    assert report.verdict == VERDICT_SUPER_STRICT


def test_martingale_mode_detects_inflated_criterion():
    market, fpp = single_atom_setup()
    grid = TimeGrid.regular(1.0, 1 / 12)
    wrong = InflatedFpp(fpp, grid)
    report = martingale_test(wrong, lambda k, t, x: fpp.sp_star(t), market,
                             grid=grid, n_paths=20_000, seed=7)
    assert report.verdict == VERDICT_VIOLATION


def test_supermartingale_mode_detects_upward_drift():
    market, fpp = single_atom_setup()
    grid = TimeGrid.regular(1.0, 1 / 12)
    wrong = InflatedFpp(fpp, grid)
    report = martingale_test(wrong, lambda k, t, x: np.zeros(1), market,
                             grid=grid, n_paths=500, seed=7,
                             mode="supermartingale")
    assert report.verdict == VERDICT_VIOLATION


def test_reports_identical_across_thread_counts():
    market, fpp = single_atom_setup()
    grid = TimeGrid.regular(0.5, 1 / 12)
    a = martingale_test(fpp, lambda k, t, x: fpp.sp_star(t), market, grid=grid,
                        n_paths=6000, seed=5, threads=1, batch_size=1000)
    b = martingale_test(fpp, lambda k, t, x: fpp.sp_star(t), market, grid=grid,
                        n_paths=6000, seed=5, threads=4, batch_size=1000)
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.se, b.se)


def test_paired_sampling_reduces_variance():
    market, fpp = single_atom_setup()
    grid = TimeGrid.regular(1.0, 1 / 12)
    dw, dwp = brownian_batch(grid, 1, 0, seed=9, path_ids=range(4000))
    lam_path = market.sharpe_path(grid)
    u_star = fpp.utility_paths(grid, dw, dwp, evolve_log_wealth_batch(
        1.0, lambda k, t, x: fpp.sp_star(t), lam_path, grid, dw))[:, -1]
    u_half = fpp.utility_paths(grid, dw, dwp, evolve_log_wealth_batch(
        1.0, lambda k, t, x: 0.5 * fpp.sp_star(t), lam_path, grid, dw))[:, -1]
    assert np.var(u_star - u_half) < np.var(u_star) + np.var(u_half)


def test_false_alarm_rate_under_true_martingale():
    # the 3-se band flags at most 1 of 100 seeds when the claim is true
    market, fpp = single_atom_setup()
    grid = TimeGrid.regular(1.0, 1 / 12)
    failures = 0
    for seed in range(100):
        report = martingale_test(fpp, lambda k, t, x: fpp.sp_star(t), market,
                                 grid=grid, n_paths=4000, seed=seed)
        failures += report.verdict != VERDICT_MARTINGALE
    assert failures <= 1


def test_degenerate_utility_warning():
    market, fpp = single_atom_setup()
    grid = TimeGrid.regular(1.0, 0.5)

    class Degenerate:
        def u0(self, x):
            return fpp.u0(x)

        def utility_paths(self, grid, dw, dwperp, log_x):
            u = fpp.utility_paths(grid, dw, dwperp, log_x)
            u[: max(1, len(u) // 50), -1] = -np.inf  # 2% of paths diverge
            return u

    report = martingale_test(Degenerate(), lambda k, t, x: np.zeros(1), market,
                             grid=grid, n_paths=500, seed=0,
                             mode="supermartingale")
    assert report.warnings and "degenerate" in report.warnings[0]


# ---------------------------------------------------------------------------
# structure scan
# ---------------------------------------------------------------------------

def test_structure_scan_power_margins_match_derivatives():
    gamma = 0.5
    x = np.geomspace(0.1, 10.0, 16)
    report = structure_scan(lambda s, xs: xs ** (1 - gamma) / (1 - gamma),
                            [None], x)
    assert report.passed
    deriv = x ** (-gamma)  # U' for the power criterion
    assert deriv.min() <= report.worst_increase_margin <= deriv.max()
    second = -gamma * x ** (-gamma - 1)
    assert second.min() <= report.worst_concavity_margin <= 0.0


def test_structure_scan_flags_flipped_weight():
    # two-power sum with one sign flipped stops being increasing in x
    def corrupted(state, x):
        return x ** 0.1 - x ** 0.3

    report = structure_scan(corrupted, [None], np.geomspace(0.1, 10.0, 16))
    assert not report.passed
    assert "FAIL" in report.to_text()


def test_structure_scan_validates_grid():
    with pytest.raises(ValueError):
        structure_scan(lambda s, x: x, [None], np.geomspace(1, 10, 4))
    with pytest.raises(ValueError):
        structure_scan(lambda s, x: x, [None], np.ones(10))
