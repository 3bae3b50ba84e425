"""Power-mixture forward performance criteria and their optimal portfolios.

A criterion is built from a finite positive measure on risk aversions
(atoms ``(gamma_i, w_i)``), a base aversion ``gamma0``, and two free
volatility choices: ``h0`` (the loading of the base aversion on W) and a
per-atom loading ``J`` on W_perp.  Along a path the criterion evaluates to

    U_t(x) = sum_i w_i x^(1-gamma_i)/(1-gamma_i) * E(M_i) * E(V_i),

with ``E(M) = exp(m - qv/2)`` the stochastic exponential of
``M_i = int H_i.dW + int J_i.dW_perp``, ``H_i`` tied to ``h0`` through

    H_i = ((gamma_i - gamma0)/gamma0) lam + (gamma_i/gamma0) h0,

and ``V_i`` the finite-variation part with rate

    v_i = -(1 - gamma_i)/(2 gamma_i) |lam + H_i|^2.

All atoms then share the single optimiser ``sigma pi* = (lam + h0)/gamma0``.
Evaluation is done in log space; values live in R union {-inf}.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import FactorDegeneracyError, InvalidExponentError
from .market import (MarketSpec, TimeGrid, brownian_batch,
                     evolve_log_wealth_batch, solve_allocation, PINV_RCOND)

GAMMA_ONE_TOL = 1e-9  # risk aversions this close to 1 are rejected


def signed_exp_sum(logs: np.ndarray, signs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable ``sum(signs * exp(logs))`` along ``axis``.

    Overflows only when the true value leaves float range, in which case the
    IEEE infinity of the correct sign is returned (-inf is the legitimate
    sentinel for criteria that diverge below).
    """
    m = np.max(logs, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    part = np.sum(signs * np.exp(logs - m), axis=axis)
    with np.errstate(divide="ignore", over="ignore"):
        return np.sign(part) * np.exp(np.squeeze(m, axis=axis) + np.log(np.abs(part)))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RiskMixture:
    """Finite positive measure on risk aversions plus the base aversion.

    Atoms are ``(gamma_i, w_i)`` with ``gamma_i > 0``, ``gamma_i != 1`` and
    ``w_i > 0``; ``gamma0`` must lie in ``[min gamma_i, max gamma_i]``.
    """

    atoms: tuple[tuple[float, float], ...]
    gamma0: float

    def __post_init__(self):
        atoms = tuple((float(g), float(w)) for g, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "gamma0", float(self.gamma0))
        if not atoms:
            raise ValueError("mixture needs at least one atom")
        for g, w in atoms:
            if g <= 0:
                raise ValueError(f"risk aversion must be positive, got {g}")
            if abs(g - 1.0) <= GAMMA_ONE_TOL:
                raise ValueError(f"risk aversion {g} is too close to 1")
            if w <= 0:
                raise ValueError(f"atom weight must be positive, got {w}")
        gs = [g for g, _ in atoms]
        if not (min(gs) <= self.gamma0 <= max(gs)):
            raise ValueError(
                f"gamma0={self.gamma0} outside the atom range [{min(gs)}, {max(gs)}]")
        if abs(self.gamma0 - 1.0) <= GAMMA_ONE_TOL:
            raise ValueError("gamma0 is too close to 1")

    @property
    def gammas(self) -> np.ndarray:
        return np.array([g for g, _ in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @classmethod
    def single(cls, gamma: float, weight: float = 1.0) -> "RiskMixture":
        return cls(atoms=((gamma, weight),), gamma0=gamma)


@dataclass(frozen=True)
class H0Spec:
    """Free process for the base aversion's W-loading.

    Kinds: ``zero``; ``constant`` (a d_w vector); ``rule`` (callable
    ``(t, state) -> vector``, usable only in single-path accumulation);
    ``portfolio_inversion`` (derive h0 = gamma0 sigma(t) pi_bar - lam(t) from
    a target allocation pi_bar, making that portfolio the optimiser).
    """

    kind: str
    value: object = None

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, vec):
        return cls("constant", np.atleast_1d(np.asarray(vec, float)))

    @classmethod
    def rule(cls, fn: Callable):
        return cls("rule", fn)

    @classmethod
    def portfolio_inversion(cls, target_pi):
        return cls("portfolio_inversion", np.atleast_1d(np.asarray(target_pi, float)))

    def at(self, t: float, market: MarketSpec, gamma0: float, state=None) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(market.d_w)
        if self.kind == "constant":
            return self.value
        if self.kind == "portfolio_inversion":
            return gamma0 * (market.sigma_at(t) @ self.value) - market.sharpe_at(t)
        if self.kind == "rule":
            return np.atleast_1d(np.asarray(self.value(t, state), float))
        raise ValueError(f"unknown h0 kind {self.kind!r}")

    @property
    def is_deterministic(self) -> bool:
        return self.kind != "rule"


@dataclass(frozen=True)
class JSpec:
    """Per-atom loading on W_perp.

    Kinds: ``zero``; ``constant`` (one d_wperp vector shared by all atoms, or
    a sequence of per-atom vectors); ``factor`` (J = A (rho'rho)^-1 rho' H,
    generated by a factor correlation pair (rho, A)).
    """

    kind: str
    value: object = None
    rho: np.ndarray = None
    a: np.ndarray = None

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, vec_or_per_atom):
        return cls("constant", vec_or_per_atom)

    @classmethod
    def factor(cls, rho, a):
        return cls("factor", rho=np.atleast_2d(np.asarray(rho, float)),
                   a=np.atleast_2d(np.asarray(a, float)))

    def for_atom(self, atom_index: int, hg: np.ndarray, market: MarketSpec) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(market.d_wperp)
        if self.kind == "constant":
            v = self.value
            if isinstance(v, (list, tuple)) and v and not np.isscalar(v[0]):
                v = v[atom_index]
            return np.atleast_1d(np.asarray(v, float))
        if self.kind == "factor":
            return factor_j(self.rho, self.a, hg)
        raise ValueError(f"unknown J kind {self.kind!r}")


@dataclass(frozen=True)
class VolatilityChoice:
    """The pair (h0, J-family) that pins down one mixture criterion."""

    h0: H0Spec
    j: JSpec

    @classmethod
    def zero(cls) -> "VolatilityChoice":
        return cls(H0Spec.zero(), JSpec.zero())


@dataclass(frozen=True)
class FppState:
    """Per-atom accumulated (m, <M>, V) along one path."""

    m: np.ndarray      # (n_atoms,)
    qv_m: np.ndarray   # (n_atoms,) nondecreasing
    v: np.ndarray      # (n_atoms,) finite variation part

    @classmethod
    def initial(cls, n_atoms: int) -> "FppState":
        return cls(np.zeros(n_atoms), np.zeros(n_atoms), np.zeros(n_atoms))


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def hgamma(gamma: float, gamma0: float, lam: np.ndarray, h0: np.ndarray) -> np.ndarray:
    """W-loading of atom gamma: ((gamma-gamma0)/gamma0) lam + (gamma/gamma0) h0."""
    if gamma0 == 0:
        raise ValueError("gamma0 must be nonzero")
    lam = np.atleast_1d(np.asarray(lam, float))
    h0 = np.atleast_1d(np.asarray(h0, float))
    return ((gamma - gamma0) / gamma0) * lam + (gamma / gamma0) * h0


def vgamma_rate(gamma: float, lam: np.ndarray, hg: np.ndarray) -> float:
    """Finite-variation rate -(1-gamma)/(2 gamma) |lam + hg|^2."""
    if gamma == 0:
        raise ValueError("gamma must be nonzero")
    u = np.atleast_1d(lam) + np.atleast_1d(hg)
    return float(-(1.0 - gamma) / (2.0 * gamma) * (u @ u))


def drift_term(gamma: float, sp: np.ndarray, lam: np.ndarray, hg: np.ndarray) -> float:
    """Drift of one atom's normalised utility under allocation sigma*pi = sp.

    Equals ``-(gamma/2) |sp - sp*|^2`` with ``sp* = (lam + hg)/gamma``: zero
    exactly at the optimiser, strictly negative elsewhere.
    """
    if gamma in (0.0, 1.0):
        raise ValueError("gamma must avoid 0 and 1")
    sp = np.atleast_1d(np.asarray(sp, float))
    u = np.atleast_1d(lam) + np.atleast_1d(hg)
    return float(vgamma_rate(gamma, lam, hg) / (1.0 - gamma) + sp @ u
                 - 0.5 * gamma * (sp @ sp))


def optimal_portfolio(lam: np.ndarray, h0: np.ndarray, gamma0: float,
                      sigma: np.ndarray, rtol: float = 1e-8) -> np.ndarray:
    """Minimum-norm pi solving sigma pi = (lam + h0)/gamma0.

    Raises
    ------
    NoExactSolutionError
        If the target is not hedgeable: the residual of its projection onto
        the column space of sigma exceeds ``rtol`` (relative to the target).
    """
    target = (np.atleast_1d(lam) + np.atleast_1d(h0)) / gamma0
    return solve_allocation(sigma, target, rtol=rtol)


def factor_j(rho: np.ndarray, a: np.ndarray, hg: np.ndarray) -> np.ndarray:
    """Factor-generated W_perp loading A (rho'rho)^-1 rho' hg."""
    rho = np.atleast_2d(np.asarray(rho, float))
    a = np.atleast_2d(np.asarray(a, float))
    hg = np.atleast_1d(np.asarray(hg, float))
    gram = rho.T @ rho
    s = np.linalg.svd(gram, compute_uv=False)
    if s[-1] <= PINV_RCOND * max(s[0], 1.0):
        raise FactorDegeneracyError("rho'rho is singular")
    return a @ np.linalg.solve(gram, rho.T @ hg)


def market_view_density(m, qv_m):
    """Stochastic-exponential density exp(m - qv/2) of one atom's (H, J) pair."""
    out = np.exp(np.asarray(m, float) - 0.5 * np.asarray(qv_m, float))
    return float(out) if out.ndim == 0 else out


def monotone_power_value(x: float, lam_plus_h: np.ndarray, gamma: float) -> float:
    """Time-monotone power criterion (x exp(-|lam+H|^2/(2 gamma)))^(1-gamma)/(1-gamma)."""
    if x <= 0:
        raise ValueError("wealth must be positive")
    if gamma in (0.0, 1.0):
        raise ValueError("gamma must avoid 0 and 1")
    u = np.atleast_1d(np.asarray(lam_plus_h, float))
    return float(np.exp((1.0 - gamma) * (np.log(x) - (u @ u) / (2.0 * gamma)))
                 / (1.0 - gamma))


# ---------------------------------------------------------------------------
# State accumulation and evaluation
# ---------------------------------------------------------------------------

def accumulate_fpp_state(state: FppState, mixture: RiskMixture, vol: VolatilityChoice,
                         t: float, lam: np.ndarray, dw: np.ndarray, dwperp: np.ndarray,
                         dt: float, market: MarketSpec = None,
                         path_state=None) -> FppState:
    """One left-endpoint accumulation step for every atom.

    ``lam`` is the Sharpe vector on the cell starting at ``t``; ``market`` is
    only needed for h0 kinds that must see sigma (portfolio inversion) or the
    W_perp dimension.  Returns a new state; the input is not mutated.
    """
    lam = np.atleast_1d(np.asarray(lam, float))
    dw = np.atleast_1d(np.asarray(dw, float))
    dwperp = np.atleast_1d(np.asarray(dwperp, float)) if dwperp is not None \
        else np.zeros(0)
    if market is not None:
        h0 = vol.h0.at(t, market, mixture.gamma0, state=path_state)
    elif vol.h0.kind == "zero":
        h0 = np.zeros_like(lam)
    elif vol.h0.kind == "constant":
        h0 = vol.h0.value
    else:
        raise ValueError(f"h0 kind {vol.h0.kind!r} needs the market argument")
    if h0.shape != lam.shape:
        raise ValueError(f"h0 has shape {h0.shape}, expected {lam.shape}")
    m = state.m.copy()
    qv = state.qv_m.copy()
    v = state.v.copy()
    perp_dims = _PerpDims(dwperp.size) if market is None else market
    for i, (g, _) in enumerate(mixture.atoms):
        hg = hgamma(g, mixture.gamma0, lam, h0)
        jg = vol.j.for_atom(i, hg, perp_dims)
        if jg.shape != dwperp.shape:
            raise ValueError(
                f"J for atom {i} has shape {jg.shape}, increments {dwperp.shape}")
        m[i] += hg @ dw + (jg @ dwperp if dwperp.size else 0.0)
        qv[i] += (hg @ hg + (jg @ jg if jg.size else 0.0)) * dt
        v[i] += vgamma_rate(g, lam, hg) * dt
    return FppState(m=m, qv_m=qv, v=v)


class _PerpDims:
    """Stand-in for a market when only d_wperp is needed."""

    def __init__(self, d_wperp):
        self.d_wperp = d_wperp


def mixture_value(gammas: np.ndarray, weights: np.ndarray, x, m, qv, v):
    """Evaluate a mixture with given per-atom state; atoms along the last axis.

    Weights may carry signs (used by the explicit signed constructions);
    ``RiskMixture``-validated criteria always pass positive ones.
    """
    gammas = np.asarray(gammas, float)
    weights = np.asarray(weights, float)
    logs = (np.log(np.abs(weights)) - np.log(np.abs(1.0 - gammas))
            + (1.0 - gammas) * np.log(np.asarray(x, float))[..., None]
            + m - 0.5 * qv + v)
    signs = np.sign(weights) * np.sign(1.0 - gammas)
    return signed_exp_sum(logs, signs)


def evaluate_fpp(x: float, state: FppState, mixture: RiskMixture) -> float:
    """Criterion value at wealth x given accumulated per-atom state.

    Computed in log space; returns -inf if the sum genuinely diverges below.
    """
    if x <= 0:
        raise ValueError("wealth must be positive")
    return float(mixture_value(mixture.gammas, mixture.weights,
                               np.asarray(x), state.m, state.qv_m, state.v))


# ---------------------------------------------------------------------------
# Path-level evaluator
# ---------------------------------------------------------------------------

class MixtureFpp:
    """A mixture criterion bound to a market, evaluated along path ensembles.

    Requires deterministic h0 (zero, constant, or portfolio inversion of a
    fixed target); rule-based h0 is only supported by the single-path
    ``accumulate_fpp_state``.
    """

    def __init__(self, mixture: RiskMixture, vol: VolatilityChoice, market: MarketSpec):
        if not vol.h0.is_deterministic:
            raise ValueError("path-ensemble evaluation needs a deterministic h0")
        self.mixture = mixture
        self.vol = vol
        self.market = market

    def h0_at(self, t: float) -> np.ndarray:
        return self.vol.h0.at(t, self.market, self.mixture.gamma0)

    def h_matrix(self, t: float) -> np.ndarray:
        """Per-atom W-loadings, shape (n_atoms, d_w)."""
        lam = self.market.sharpe_at(t)
        h0 = self.h0_at(t)
        return np.stack([hgamma(g, self.mixture.gamma0, lam, h0)
                         for g in self.mixture.gammas])

    def j_matrix(self, t: float) -> np.ndarray:
        """Per-atom W_perp-loadings, shape (n_atoms, d_wperp)."""
        h = self.h_matrix(t)
        return np.stack([self.vol.j.for_atom(i, h[i], self.market)
                         for i in range(self.mixture.n_atoms)])

    def sp_star(self, t: float) -> np.ndarray:
        """Optimal sigma*pi = (lam + h0)/gamma0."""
        return (self.market.sharpe_at(t) + self.h0_at(t)) / self.mixture.gamma0

    def u0(self, x: float) -> float:
        return evaluate_fpp(x, FppState.initial(self.mixture.n_atoms), self.mixture)

    def state_paths(self, grid: TimeGrid, dw: np.ndarray, dwperp: np.ndarray):
        """Accumulated (m, qv, v) along an ensemble.

        Returns ``m`` of shape (B, N+1, n_atoms) and deterministic ``qv``,
        ``v`` of shape (N+1, n_atoms).
        """
        n_steps = grid.n_steps
        n_atoms = self.mixture.n_atoms
        h = np.empty((n_steps, n_atoms, self.market.d_w))
        j = np.empty((n_steps, n_atoms, self.market.d_wperp))
        vr = np.empty((n_steps, n_atoms))
        lam_path = self.market.sharpe_path(grid)
        for k in range(n_steps):
            t = float(grid.times[k])
            h[k] = self.h_matrix(t)
            j[k] = self.j_matrix(t)
            for i, g in enumerate(self.mixture.gammas):
                vr[k, i] = vgamma_rate(g, lam_path[k], h[k, i])
        dt = grid.dt
        qv = np.vstack([np.zeros((1, n_atoms)),
                        np.cumsum((np.einsum("kad,kad->ka", h, h)
                                   + np.einsum("kad,kad->ka", j, j)) * dt[:, None], axis=0)])
        v = np.vstack([np.zeros((1, n_atoms)), np.cumsum(vr * dt[:, None], axis=0)])
        dm = np.einsum("bkd,kad->bka", dw, h)
        if self.market.d_wperp:
            dm += np.einsum("bkd,kad->bka", dwperp, j)
        m = np.concatenate([np.zeros((dw.shape[0], 1, n_atoms)),
                            np.cumsum(dm, axis=1)], axis=1)
        return m, qv, v

    def utility_paths(self, grid: TimeGrid, dw: np.ndarray, dwperp: np.ndarray,
                      log_x: np.ndarray) -> np.ndarray:
        """U_t(X_t) along the ensemble, shape (B, N+1); log_x is (B, N+1)."""
        m, qv, v = self.state_paths(grid, dw, dwperp)
        gammas = self.mixture.gammas
        weights = self.mixture.weights
        logs = (np.log(weights) - np.log(np.abs(1.0 - gammas))
                + (1.0 - gammas) * log_x[..., None] + m - 0.5 * qv + v)
        signs = np.sign(1.0 - gammas)
        return signed_exp_sum(logs, signs)


# ---------------------------------------------------------------------------
# Integrability constants and moment diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrueFppConstants:
    """Exponent bookkeeping for the genuine (not just local) criteria.

    ``cj_lower`` bounds the Novikov constant of the W_perp loadings and
    ``ch_lower(gamma)`` the one for h0; both scale with q = 2v/(v-1).
    """

    v: float
    u: float
    p1: float
    p2: float
    p3: float
    gamma0: float
    q: float
    cj_lower: float
    ch_lower_atoms: tuple[tuple[float, float], ...]

    def ch_lower(self, gamma: float) -> float:
        branch1 = (self.u * self.v * self.p3 * (1.0 - gamma)
                   * (2.0 * self.u * self.v * self.p1 * (1.0 - gamma) - 1.0)
                   / self.gamma0 ** 2)
        branch2 = (0.5 * self.q * self.p3 * gamma
                   * (self.q * self.p1 * gamma - 1.0) / self.gamma0 ** 2)
        return max(branch1, branch2)


def true_fpp_constants(v: float, u: float, p1: float, p2: float, p3: float,
                       gamma0: float, mixture: RiskMixture) -> TrueFppConstants:
    """Derive q = 2v/(v-1) and the lower bounds for the Novikov constants.

    Raises
    ------
    InvalidExponentError
        Unless v, u, p1, p2, p3 > 1 and 1/p1 + 1/p2 + 1/p3 < 1.
    """
    if v <= 1 or u <= 1:
        raise InvalidExponentError(f"need v > 1 and u > 1, got v={v}, u={u}")
    if min(p1, p2, p3) <= 1:
        raise InvalidExponentError("all Holder exponents must exceed 1")
    if 1.0 / p1 + 1.0 / p2 + 1.0 / p3 >= 1.0:
        raise InvalidExponentError(
            f"Holder constraint violated: 1/{p1} + 1/{p2} + 1/{p3} >= 1")
    q = 2.0 * v / (v - 1.0)
    cj = 0.5 * q * p2 * (q * p1 - 1.0)
    consts = TrueFppConstants(v=v, u=u, p1=p1, p2=p2, p3=p3, gamma0=gamma0, q=q,
                              cj_lower=cj, ch_lower_atoms=())
    atoms = tuple((g, consts.ch_lower(g)) for g in mixture.gammas)
    return replace(consts, ch_lower_atoms=atoms)


@dataclass(frozen=True)
class MomentReport:
    """Monte Carlo snapshot of the admissibility moments of a strategy.

    A sampling-based indicator only: finiteness of an expectation cannot be
    established from finitely many paths, and the report says so.
    """

    integral_mean: float
    integral_se: float
    sup_moment: float
    sup_moment_se: float
    sup_time: float
    n_paths: int
    v: float
    u: float
    any_nonfinite: bool
    note: str = ("sampling-based indicator of the moment conditions, "
                 "not a finiteness certificate")


def check_admissibility_moments(sp_rule: Callable, market: MarketSpec,
                                mixture: RiskMixture, v: float, u: float,
                                n_paths: int, grid: TimeGrid, seed: int,
                                x0: float = 1.0) -> MomentReport:
    """Estimate the time-integrated and running-sup admissibility moments.

    ``sp_rule(k, t, x_vec) -> sigma*pi`` as in the ensemble evolver.  The
    integral moment is sum_i w_i int E[X_t^(2v(1-g_i)) |sigma pi|^(2v)] dt
    (left-endpoint rule on the grid); the sup moment is
    sup_t sum_i w_i E[X_t^(2uv(1-g_i))].
    """
    if v <= 1 or u <= 1:
        raise InvalidExponentError(f"need v > 1 and u > 1, got v={v}, u={u}")
    dw, dwp = brownian_batch(grid, market.d_w, market.d_wperp, seed, range(n_paths))
    lam_path = market.sharpe_path(grid)
    n_steps = grid.n_steps
    sp_applied = np.empty((n_paths, n_steps, market.d_w))

    def recording_rule(k, t, x):
        sp = np.asarray(sp_rule(k, t, x), float)
        sp_applied[:, k, :] = sp
        return sp

    log_x = evolve_log_wealth_batch(x0, recording_rule, lam_path, grid, dw)
    gammas = mixture.gammas
    weights = mixture.weights
    sp_norm = np.sqrt(np.einsum("bkd,bkd->bk", sp_applied, sp_applied))
    # integral moment, accumulated per path then averaged
    with np.errstate(divide="ignore"):
        log_spv = 2.0 * v * np.log(sp_norm)  # -inf where sp = 0
    integrand = np.zeros((n_paths, n_steps))
    for g, w in zip(gammas, weights):
        term = np.exp(2.0 * v * (1.0 - g) * log_x[:, :-1] + log_spv)
        integrand += w * term
    per_path_integral = integrand @ grid.dt
    integral_mean = float(np.mean(per_path_integral))
    integral_se = float(np.std(per_path_integral, ddof=1) / np.sqrt(n_paths)) \
        if n_paths > 1 else 0.0
    # sup moment over grid times
    sup_vals = np.zeros((n_paths, n_steps + 1))
    for g, w in zip(gammas, weights):
        sup_vals += w * np.exp(2.0 * u * v * (1.0 - g) * log_x)
    means = np.mean(sup_vals, axis=0)
    k_star = int(np.argmax(means))
    sup_se = float(np.std(sup_vals[:, k_star], ddof=1) / np.sqrt(n_paths)) \
        if n_paths > 1 else 0.0
    nonfinite = bool(~np.all(np.isfinite(per_path_integral))
                     or ~np.all(np.isfinite(sup_vals)))
    return MomentReport(integral_mean=integral_mean, integral_se=integral_se,
                        sup_moment=float(means[k_star]), sup_moment_se=sup_se,
                        sup_time=float(grid.times[k_star]), n_paths=n_paths,
                        v=v, u=u, any_nonfinite=nonfinite)
