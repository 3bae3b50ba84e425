"""Mixture criteria: loadings, drifts, evaluation, optimal portfolios, constants."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpplab.errors import (FactorDegeneracyError, InvalidExponentError,
                           NoExactSolutionError)
from fpplab.market import MarketSpec, TimeGrid, brownian_batch, simulate_brownian
from fpplab.mixture import (FppState, H0Spec, JSpec, MixtureFpp, RiskMixture,
                            VolatilityChoice, accumulate_fpp_state,
                            check_admissibility_moments, drift_term, evaluate_fpp,
                            factor_j, hgamma, market_view_density,
                            monotone_power_value, optimal_portfolio,
                            true_fpp_constants, vgamma_rate)
from fpplab.verify import structure_scan


def base_market(d_wperp=0):
    return MarketSpec(n_stocks=1, d_w=1, d_wperp=d_wperp, sigma=0.2, mu=0.04)


# ---------------------------------------------------------------------------
# mixture type validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("atoms,gamma0", [
    (((1.0, 1.0),), 1.0),                 # gamma = 1 excluded
    (((0.5, 0.0),), 0.5),                 # zero weight
    (((0.5, -1.0),), 0.5),                # negative weight
    (((-0.5, 1.0),), 0.5),                # negative aversion
    (((0.5, 1.0), (0.8, 1.0)), 0.9),      # gamma0 outside the hull
    ((), 0.5),                            # empty
])
def test_risk_mixture_rejects_invalid(atoms, gamma0):
    with pytest.raises(ValueError):
        RiskMixture(atoms=atoms, gamma0=gamma0)


def test_risk_mixture_gamma0_in_hull():
    mix = RiskMixture(atoms=((0.5, 1.0), (2.0, 0.5)), gamma0=0.8)
    assert mix.n_atoms == 2
    assert mix.gammas == pytest.approx([0.5, 2.0])


# ---------------------------------------------------------------------------
# loadings and rates
# ---------------------------------------------------------------------------

def test_hgamma_identity_at_gamma0():
    assert hgamma(0.5, 0.5, [0.2], [0.1]) == pytest.approx([0.1])


def test_hgamma_double_aversion_base():
    # gamma0 = 2 gamma with h0 = 0 gives H = -lam/2
    assert hgamma(0.25, 0.5, [0.3], [0.0]) == pytest.approx([-0.15])


def test_hgamma_arithmetic():
    got = hgamma(0.3, 0.5, [0.2, 0.0], [0.1, 0.1])
    assert got == pytest.approx([-0.02, 0.06])


def test_vgamma_vanishing_argument():
    assert vgamma_rate(0.5, [0.2], [-0.2]) == 0.0


def test_vgamma_arithmetic():
    assert vgamma_rate(0.5, [0.2], [0.0]) == pytest.approx(-0.02)


def test_vgamma_sign_flips_above_one():
    assert vgamma_rate(2.0, [0.2], [0.0]) == pytest.approx(0.01)


# ---------------------------------------------------------------------------
# drift bound
# ---------------------------------------------------------------------------

def test_drift_zero_at_optimum():
    lam, h0, g0 = np.array([0.2]), np.array([0.0]), 0.5
    sp_star = (lam + h0) / g0
    for g in (0.3, 0.5, 2.5):
        hg = hgamma(g, g0, lam, h0)
        assert abs(drift_term(g, sp_star, lam, hg)) < 1e-12


def test_drift_at_zero_allocation():
    # v/(1-gamma) = -|lam|^2/(2 gamma) for hg = 0
    assert drift_term(0.5, [0.0], [0.2], [0.0]) == pytest.approx(-0.04)


def test_drift_arithmetic():
    assert drift_term(0.5, [0.1], [0.2], [0.0]) == pytest.approx(-0.0225)


def test_drift_dominance_and_curvature_identity():
    # over random draws: drift <= 0 with the exact strong-concavity gap
    rng = np.random.default_rng(42)
    for _ in range(1000):
        d = rng.integers(1, 4)
        g = rng.uniform(0.1, 3.0)
        if abs(g - 1.0) < 0.05:
            continue
        g0 = rng.uniform(0.1, 3.0)
        if abs(g0 - 1.0) < 0.05:
            continue
        lam = rng.normal(size=d)
        h0 = rng.normal(size=d)
        sp = rng.normal(size=d, scale=2.0)
        hg = hgamma(g, g0, lam, h0)
        sp_star = (lam + h0) / g0
        val = drift_term(g, sp, lam, hg)
        gap = 0.5 * g * float((sp - sp_star) @ (sp - sp_star))
        assert val <= 1e-12
        assert val == pytest.approx(-gap, abs=1e-10)


def test_all_atoms_share_one_maximiser():
    lam = np.array([0.3, -0.1])
    h0 = np.array([0.05, 0.2])
    g0 = 0.7
    sp_star = (lam + h0) / g0
    for g in (0.3, 0.7, 2.0):
        hg = hgamma(g, g0, lam, h0)
        assert (lam + hg) / g == pytest.approx(sp_star)


# ---------------------------------------------------------------------------
# optimal portfolio
# ---------------------------------------------------------------------------

def test_optimal_portfolio_scalar():
    pi = optimal_portfolio([0.2], [0.0], 0.5, [[0.2]])
    assert pi == pytest.approx([2.0])


def test_optimal_portfolio_double_aversion_setting():
    # gamma0 = 2 gamma, h0 = 0: sigma pi* = lam / (2 gamma)
    g = 0.25
    pi = optimal_portfolio([0.2], [0.0], 2 * g, [[0.2]])
    assert 0.2 * pi[0] == pytest.approx(0.2 / (2 * g))


def test_portfolio_inversion_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = rng.integers(1, 4)
        d_w = n + rng.integers(0, 3)
        sigma = rng.normal(size=(d_w, n)) + np.eye(d_w, n)
        lam = rng.normal(size=d_w)
        pi = rng.normal(size=n, scale=3.0)
        g0 = rng.uniform(0.2, 3.0)
        h0 = g0 * (sigma @ pi) - lam
        recovered = optimal_portfolio(lam, h0, g0, sigma)
        assert recovered == pytest.approx(pi, abs=1e-10)


def test_optimal_portfolio_unhedgeable_target():
    sigma = np.array([[1.0], [0.0]])  # column space misses e_2
    with pytest.raises(NoExactSolutionError):
        optimal_portfolio([0.0, 1.0], [0.0, 0.0], 1.0, sigma)


# ---------------------------------------------------------------------------
# factor-generated loadings
# ---------------------------------------------------------------------------

def test_factor_j_zero_input():
    assert factor_j([[1.0], [0.0]], [[0.5]], [0.0, 0.0]) == pytest.approx([0.0])


def test_factor_j_zero_factor_weights():
    assert factor_j([[1.0], [0.0]], [[0.0]], [0.3, 0.9]) == pytest.approx([0.0])


def test_factor_j_hand_case():
    # rho = (1,0)', A = (0.5): (rho'rho)^-1 rho' h = h_1, scaled by 0.5
    assert factor_j([[1.0], [0.0]], [[0.5]], [0.3, 0.9]) == pytest.approx([0.15])


def test_factor_j_matches_generic_solve():
    rng = np.random.default_rng(3)
    for _ in range(20):
        d_w, d_b, d_wp = 3, 2, 2
        rho = rng.normal(size=(d_w, d_b))
        a = rng.normal(size=(d_wp, d_b))
        hg = rng.normal(size=d_w)
        expected = a @ np.linalg.lstsq(rho, hg, rcond=None)[0]
        assert factor_j(rho, a, hg) == pytest.approx(expected, rel=1e-9)


def test_factor_j_eve_scaling():
    # orthogonal columns of equal norm: rho'rho = c I, so J = A rho' h / c
    rho = np.array([[2.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
    a = np.array([[0.3, -0.1]])
    hg = np.array([1.0, 2.0, 3.0])
    expected = a @ (rho.T @ hg) / 4.0
    assert factor_j(rho, a, hg) == pytest.approx(expected)


def test_factor_j_degenerate():
    with pytest.raises(FactorDegeneracyError):
        factor_j([[1.0, 1.0], [1.0, 1.0]], [[0.1, 0.1]], [0.2, 0.2])


# ---------------------------------------------------------------------------
# state accumulation
# ---------------------------------------------------------------------------

def test_accumulate_zero_dynamics():
    market = MarketSpec(n_stocks=1, d_w=1, d_wperp=0, sigma=0.2, mu=0.0)
    mix = RiskMixture.single(0.5)
    vol = VolatilityChoice.zero()
    state = FppState.initial(1)
    state = accumulate_fpp_state(state, mix, vol, 0.0, [0.0], [0.3], [], 0.5,
                                 market=market)
    assert state.m == pytest.approx([0.0])
    assert state.qv_m == pytest.approx([0.0])
    assert state.v == pytest.approx([0.0])


def test_accumulate_single_atom_base_loading_vanishes():
    # h0 = 0 at the base aversion: M stays 0, V integrates the rate exactly
    mix = RiskMixture.single(0.5)
    vol = VolatilityChoice.zero()
    state = FppState.initial(1)
    rng = np.random.default_rng(0)
    dt = 0.1
    for k in range(10):
        state = accumulate_fpp_state(state, mix, vol, k * dt, [0.2],
                                     rng.normal(size=1) * np.sqrt(dt), [], dt)
    assert state.m == pytest.approx([0.0])
    assert state.v == pytest.approx([-0.02], abs=1e-15)
    assert evaluate_fpp(1.0, state, mix) == pytest.approx(2 * np.exp(-0.02))


def test_accumulate_matches_brute_force_recomputation():
    mix = RiskMixture(atoms=((0.4, 1.0), (2.0, 0.7)), gamma0=0.4)
    vol = VolatilityChoice(h0=H0Spec.constant([0.1, -0.05]),
                           j=JSpec.constant([[0.2], [0.3]]))
    rng = np.random.default_rng(5)
    dt = 0.05
    lam = np.array([0.3, 0.1])
    state = FppState.initial(2)
    m_ref = np.zeros(2)
    qv_ref = np.zeros(2)
    v_ref = np.zeros(2)
    for k in range(20):
        dw = rng.normal(size=2) * np.sqrt(dt)
        dwp = rng.normal(size=1) * np.sqrt(dt)
        state = accumulate_fpp_state(state, mix, vol, k * dt, lam, dw, dwp, dt)
        # independent step-by-step recomputation
        for i, (g, _) in enumerate(mix.atoms):
            hg = ((g - 0.4) / 0.4) * lam + (g / 0.4) * np.array([0.1, -0.05])
            jg = np.array([[0.2], [0.3]][i])
            m_ref[i] += hg @ dw + jg @ dwp
            qv_ref[i] += (hg @ hg + jg @ jg) * dt
            v_ref[i] += -(1 - g) / (2 * g) * ((lam + hg) @ (lam + hg)) * dt
    assert state.m == pytest.approx(m_ref, rel=1e-12)
    assert state.qv_m == pytest.approx(qv_ref, rel=1e-12)
    assert state.v == pytest.approx(v_ref, rel=1e-12)
    assert np.all(np.diff([0.0, *state.qv_m]) >= 0.0)


def test_state_paths_match_stepwise_accumulation():
    market = MarketSpec(n_stocks=1, d_w=1, d_wperp=1, sigma=0.25, mu=0.05)
    mix = RiskMixture(atoms=((0.5, 1.0), (0.8, 2.0)), gamma0=0.5)
    vol = VolatilityChoice(h0=H0Spec.constant([0.1]), j=JSpec.constant([0.2]))
    fpp = MixtureFpp(mix, vol, market)
    grid = TimeGrid.regular(1.0, 0.125)
    dw, dwp = brownian_batch(grid, 1, 1, seed=8, path_ids=[0])
    m, qv, v = fpp.state_paths(grid, dw, dwp)
    state = FppState.initial(2)
    for k in range(grid.n_steps):
        state = accumulate_fpp_state(state, mix, vol, float(grid.times[k]),
                                     market.sharpe_at(0.0), dw[0, k], dwp[0, k],
                                     float(grid.dt[k]), market=market)
    assert m[0, -1] == pytest.approx(state.m, rel=1e-12)
    assert qv[-1] == pytest.approx(state.qv_m, rel=1e-12)
    assert v[-1] == pytest.approx(state.v, rel=1e-12)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_evaluate_initial_condition_single_atom():
    mix = RiskMixture.single(0.5)
    assert evaluate_fpp(4.0, FppState.initial(1), mix) == pytest.approx(4.0)


def test_evaluate_with_state():
    mix = RiskMixture.single(0.5)
    state = FppState(m=np.array([0.0]), qv_m=np.array([0.0]), v=np.array([-0.02]))
    assert evaluate_fpp(1.0, state, mix) == pytest.approx(2 * np.exp(-0.02))


def test_evaluate_two_atoms_initial():
    mix = RiskMixture(atoms=((0.9, 1.0), (0.7, 1.0)), gamma0=0.8)
    expected = 1 / 0.1 + 1 / 0.3
    assert evaluate_fpp(1.0, FppState.initial(2), mix) == pytest.approx(expected)


def test_evaluate_rejects_nonpositive_wealth():
    mix = RiskMixture.single(0.5)
    with pytest.raises(ValueError):
        evaluate_fpp(0.0, FppState.initial(1), mix)


def test_evaluate_negative_infinity_sentinel():
    # an aversion above one turns a diverging exponential into -inf
    mix = RiskMixture.single(2.0)
    state = FppState(m=np.array([800.0]), qv_m=np.array([0.0]), v=np.array([0.0]))
    assert np.isneginf(evaluate_fpp(1.0, state, mix))


def test_initial_condition_recovery_log_grid():
    mix = RiskMixture(atoms=((0.3, 0.4), (0.9, 1.1), (2.5, 0.2)), gamma0=0.9)
    state = FppState.initial(3)
    for x in np.geomspace(1e-3, 1e3, 25):
        direct = sum(w * x ** (1 - g) / (1 - g) for g, w in mix.atoms)
        assert evaluate_fpp(float(x), state, mix) == pytest.approx(direct, rel=1e-14)


@given(x=st.floats(min_value=1e-3, max_value=1e3),
       gamma=st.floats(min_value=0.05, max_value=4.0))
@settings(max_examples=300, deadline=None)
def test_single_power_evaluation_matches_direct_formula(x, gamma):
    if abs(gamma - 1.0) < 1e-3:
        return
    mix = RiskMixture.single(gamma)
    direct = x ** (1 - gamma) / (1 - gamma)
    assert evaluate_fpp(x, FppState.initial(1), mix) == pytest.approx(direct, rel=1e-12)


def test_pointwise_concavity_of_reachable_states():
    market = base_market(d_wperp=0)
    mix = RiskMixture(atoms=((0.5, 1.0), (2.0, 0.5)), gamma0=0.8)
    vol = VolatilityChoice(h0=H0Spec.constant([0.15]), j=JSpec.zero())
    fpp = MixtureFpp(mix, vol, market)
    grid = TimeGrid.regular(1.0, 0.05)
    dw, dwp = brownian_batch(grid, 1, 0, seed=12, path_ids=range(6))
    m, qv, v = fpp.state_paths(grid, dw, dwp)
    states = [(m[b, k], qv[k], v[k]) for b in range(6) for k in (10, 20)]

    from fpplab.mixture import mixture_value

    def evaluate(state, x):
        sm, sqv, sv = state
        return mixture_value(mix.gammas, mix.weights, x, sm, sqv, sv)

    report = structure_scan(evaluate, states, np.geomspace(1e-2, 1e2, 20))
    assert report.passed


# ---------------------------------------------------------------------------
# market view and time-monotone value
# ---------------------------------------------------------------------------

def test_market_view_density_identity():
    assert market_view_density(0.0, 0.0) == 1.0


def test_market_view_density_arithmetic():
    assert market_view_density(0.5, 0.25) == pytest.approx(np.exp(0.375))


def test_market_view_density_mc_mean_is_one():
    # E exp(H W_T - H^2 T / 2) = 1 for constant H
    market = base_market()
    mix = RiskMixture.single(0.5)
    vol = VolatilityChoice(h0=H0Spec.constant([0.4]), j=JSpec.zero())
    fpp = MixtureFpp(mix, vol, market)
    grid = TimeGrid.regular(1.0, 1 / 64)
    n = 100_000
    dw, dwp = brownian_batch(grid, 1, 0, seed=77, path_ids=range(n))
    m, qv, _ = fpp.state_paths(grid, dw, dwp)
    dens = market_view_density(m[:, -1, 0], qv[-1, 0])
    se = dens.std(ddof=1) / np.sqrt(n)
    assert abs(dens.mean() - 1.0) < 3 * se


def test_monotone_power_value_undiscounted():
    assert monotone_power_value(4.0, [0.0], 0.5) == pytest.approx(4.0)


def test_monotone_power_value_arithmetic():
    assert monotone_power_value(1.0, [0.2], 0.5) == pytest.approx(2 * np.exp(-0.02))


def test_monotone_power_factorisation_along_path():
    # single-atom criterion = time-monotone value times the market-view density
    market = base_market()
    g = 0.5
    mix = RiskMixture.single(g)
    h = 0.1
    vol = VolatilityChoice(h0=H0Spec.constant([h]), j=JSpec.zero())
    fpp = MixtureFpp(mix, vol, market)
    grid = TimeGrid.regular(1.0, 1 / 128)  # T = 1 so int |lam+H|^2 = |lam+H|^2
    dw, dwp = brownian_batch(grid, 1, 0, seed=5, path_ids=[0])
    m, qv, v = fpp.state_paths(grid, dw, dwp)
    lam_plus_h = market.sharpe_at(0.0) + h
    for x in (0.5, 1.0, 3.0):
        full = evaluate_fpp(x, FppState(m[0, -1], qv[-1], v[-1]), mix)
        factored = (monotone_power_value(x, lam_plus_h, g)
                    * market_view_density(m[0, -1, 0], qv[-1, 0]))
        assert full == pytest.approx(factored, rel=1e-10)


# ---------------------------------------------------------------------------
# integrability constants
# ---------------------------------------------------------------------------

def test_constants_reference_point():
    mix = RiskMixture.single(0.5)
    consts = true_fpp_constants(2.0, 2.0, 4.0, 4.0, 4.0, 0.5, mix)
    assert consts.q == pytest.approx(4.0)
    assert consts.cj_lower == pytest.approx(120.0)
    assert np.isfinite(consts.ch_lower(0.5))


def test_constants_q_decreases_to_two():
    mix = RiskMixture.single(0.5)
    qs = [true_fpp_constants(v, 2.0, 4.0, 4.0, 4.0, 0.5, mix).q
          for v in (1.5, 2.0, 5.0, 100.0, 1e8)]
    assert all(a > b for a, b in zip(qs, qs[1:]))
    assert qs[-1] == pytest.approx(2.0, abs=1e-6)


def test_constants_first_branch_vanishes_near_one():
    mix = RiskMixture.single(0.5)
    consts = true_fpp_constants(2.0, 2.0, 4.0, 4.0, 4.0, 0.5, mix)
    u, v, p1, p3, g0 = consts.u, consts.v, consts.p1, consts.p3, consts.gamma0
    for eps in (1e-2, 1e-4, 1e-6):
        g = 1 - eps
        branch1 = u * v * p3 * (1 - g) * (2 * u * v * p1 * (1 - g) - 1) / g0 ** 2
        assert abs(branch1) < 5 * eps * u * v * p3 / g0 ** 2


@pytest.mark.parametrize("v,u,p1,p2,p3", [
    (1.0, 2.0, 4.0, 4.0, 4.0),     # v must exceed 1
    (2.0, 1.0, 4.0, 4.0, 4.0),     # u must exceed 1
    (2.0, 2.0, 2.0, 2.0, 2.0),     # Holder sum 3/2 >= 1
    (2.0, 2.0, 0.5, 4.0, 4.0),     # p1 <= 1
])
def test_constants_reject_invalid_exponents(v, u, p1, p2, p3):
    mix = RiskMixture.single(0.5)
    with pytest.raises(InvalidExponentError):
        true_fpp_constants(v, u, p1, p2, p3, 0.5, mix)


# ---------------------------------------------------------------------------
# admissibility moment diagnostics
# ---------------------------------------------------------------------------

def test_moments_null_portfolio_integral_is_zero():
    market = base_market()
    mix = RiskMixture.single(0.5)
    grid = TimeGrid.regular(1.0, 0.25)
    report = check_admissibility_moments(
        lambda k, t, x: np.zeros(1), market, mix, v=1.5, u=1.5,
        n_paths=200, grid=grid, seed=1)
    assert report.integral_mean == 0.0
    assert not report.any_nonfinite
    assert "indicator" in report.note


def test_moments_match_lognormal_closed_form():
    # constant sigma*pi = c: X_t is lognormal with known power moments
    market = base_market()
    g = 0.5
    mix = RiskMixture.single(g)
    grid = TimeGrid.regular(1.0, 1 / 12)
    v_exp, u_exp, c, lam, n = 1.5, 1.5, 0.3, 0.2, 40_000
    report = check_admissibility_moments(
        lambda k, t, x: np.array([c]), market, mix, v=v_exp, u=u_exp,
        n_paths=n, grid=grid, seed=44)
    a = 2 * v_exp * (1 - g)
    growth = a * (c * lam - 0.5 * c * c) + 0.5 * a * a * c * c
    moment = np.exp(growth * grid.times[:-1])  # left endpoints
    expected_integral = float(np.sum(moment * c ** (2 * v_exp) * grid.dt))
    assert abs(report.integral_mean - expected_integral) < 3 * report.integral_se
    b = 2 * u_exp * v_exp * (1 - g)
    growth_b = b * (c * lam - 0.5 * c * c) + 0.5 * b * b * c * c
    expected_sup = float(np.max(np.exp(growth_b * grid.times)))
    assert abs(report.sup_moment - expected_sup) < 3 * report.sup_moment_se


def test_moments_reject_boundary_exponent():
    market = base_market()
    mix = RiskMixture.single(0.5)
    grid = TimeGrid.regular(1.0, 0.5)
    with pytest.raises(InvalidExponentError):
        check_admissibility_moments(lambda k, t, x: np.zeros(1), market, mix,
                                    v=1.0, u=2.0, n_paths=10, grid=grid, seed=0)


# ---------------------------------------------------------------------------
# rule-based h0 through the single-path accumulator
# ---------------------------------------------------------------------------

def test_rule_h0_single_path_accumulation():
    market = base_market()
    mix = RiskMixture.single(0.5)
    vol = VolatilityChoice(h0=H0Spec.rule(lambda t, s: [0.1 * t]), j=JSpec.zero())
    grid = TimeGrid.regular(1.0, 0.5)
    paths = simulate_brownian(grid, 1, 0, seed=2, path_id=0)
    state = FppState.initial(1)
    for k in range(grid.n_steps):
        state = accumulate_fpp_state(state, mix, vol, float(grid.times[k]),
                                     [0.2], paths.dw[k], [], 0.5, market=market)
    expected_m = 0.0 * paths.dw[0, 0] + 0.05 * paths.dw[1, 0]
    assert state.m[0] == pytest.approx(expected_m)
