"""Signed three-power mixture criterion with explicit validity certificates.

For gamma in (0, 1/3) the alternating combination of aversions
(gamma, 2*gamma, 3*gamma) with weights (+1, -1, +1), base aversion
2*gamma and vanishing free loadings collapses to the closed form

    U_t(x) = Z^-1 ( x^(1-g)/(1-g)   e^{-I/(8g)}
                  - x^(1-2g)/(1-2g) e^{-(1-2g) I/(4g)} Z
                  + x^(1-3g)/(1-3g) e^{(1 - 3/(8g)) I} Z^2 ),

with Z = exp(half int lam.dW) and I = int |lam|^2 ds.  Monotonicity and
concavity in x reduce to two quadratics in Z x^-g whose discriminants,
-3 e^{-(1-2g)/(2g)} and -8 e^{-(1-2g)/(2g)} (per unit of I), are negative on
the whole parameter range; the drift factorises into that strictly positive
quadratic times |lam|^2/(8g) - (sigma pi).lam/2 + g |sigma pi|^2/2, which
vanishes exactly at sigma pi = lam/(2g).

The middle weight is negative, yet the construction passes every criterion
check: positivity of all weights is necessary for two-power sums but not in
general.  Signed combinations stay confined to this module; the generic
mixture type keeps rejecting them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import MarketSpec, TimeGrid
from .mixture import signed_exp_sum


@dataclass(frozen=True)
class ThreePowerSpec:
    """Base risk aversion of the signed construction; must lie in (0, 1/3)."""

    gamma: float

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0 / 3.0):
            raise ValueError(f"gamma must lie in (0, 1/3), got {self.gamma}")

    @property
    def gammas(self) -> np.ndarray:
        g = self.gamma
        return np.array([g, 2.0 * g, 3.0 * g])

    @property
    def weights(self) -> np.ndarray:
        return np.array([1.0, -1.0, 1.0])


def _term_logs(x, log_z, int_lam2, gamma):
    """Log-magnitudes of the three summands; all signs are carried separately."""
    g = gamma
    lx = np.log(np.asarray(x, float))
    i = np.asarray(int_lam2, float)
    lz = np.asarray(log_z, float)
    l1 = (1.0 - g) * lx - np.log(1.0 - g) - i / (8.0 * g) - lz
    l2 = (1.0 - 2.0 * g) * lx - np.log(1.0 - 2.0 * g) - (1.0 - 2.0 * g) * i / (4.0 * g)
    l3 = ((1.0 - 3.0 * g) * lx - np.log(1.0 - 3.0 * g)
          + (1.0 - 3.0 / (8.0 * g)) * i + lz)
    return np.stack(np.broadcast_arrays(l1, l2, l3), axis=-1)


def three_power_value(x, z_factor, int_lam2, spec: ThreePowerSpec):
    """Criterion value at wealth x given accumulated Z and I = int |lam|^2 ds.

    Evaluated in log space, so long horizons and extreme Z cannot overflow
    intermediate products.  Accepts arrays broadcastable against each other.
    """
    x = np.asarray(x, float)
    z = np.asarray(z_factor, float)
    if np.any(x <= 0):
        raise ValueError("wealth must be positive")
    if np.any(z <= 0):
        raise ValueError("z_factor must be positive")
    logs = _term_logs(x, np.log(z), int_lam2, spec.gamma)
    out = signed_exp_sum(logs, np.array([1.0, -1.0, 1.0]))
    return float(out) if out.ndim == 0 else out


def concavity_discriminants(gamma: float) -> tuple[float, float]:
    """Discriminants certifying monotonicity and concavity (per unit of I).

    Both equal a negative constant times exp(-(1-2g)/(2g)) and stay strictly
    negative on (0, 1/3), so the two quadratics in Z x^-g have no real roots.
    """
    if not (0.0 < gamma < 1.0 / 3.0):
        raise ValueError(f"gamma must lie in (0, 1/3), got {gamma}")
    e = np.exp(-(1.0 - 2.0 * gamma) / (2.0 * gamma))
    return -3.0 * e, -8.0 * e


def three_power_drift_factors(x: float, z_factor: float, int_lam2: float,
                              lam, sp, spec: ThreePowerSpec) -> tuple[float, float]:
    """The two factors whose product (with sign flipped) is the drift.

    ``positive_factor`` is the concavity quadratic a - 2b y + 3c y^2 at
    y = Z x^-gamma (strictly positive by the discriminant certificate);
    ``quadratic_factor`` is |lam|^2/(8g) - (sp.lam)/2 + g |sp|^2 / 2, zero
    exactly at sp = lam/(2g).  The criterion's drift is
    -Z^-1 x^(1-g) * positive_factor * quadratic_factor <= 0.
    """
    g = spec.gamma
    if x <= 0 or z_factor <= 0:
        raise ValueError("wealth and z_factor must be positive")
    i = float(int_lam2)
    a = np.exp(-i / (8.0 * g))
    b = np.exp(-(1.0 - 2.0 * g) * i / (4.0 * g))
    c = np.exp((1.0 - 3.0 / (8.0 * g)) * i)
    y = z_factor * x ** (-g)
    positive = float(a - 2.0 * b * y + 3.0 * c * y * y)
    lam = np.atleast_1d(np.asarray(lam, float))
    sp = np.atleast_1d(np.asarray(sp, float))
    quadratic = float((lam @ lam) / (8.0 * g) - 0.5 * (sp @ lam)
                      + 0.5 * g * (sp @ sp))
    return positive, quadratic


class ThreePowerFpp:
    """The signed criterion bound to a market, evaluated along ensembles."""

    def __init__(self, spec: ThreePowerSpec, market: MarketSpec):
        self.spec = spec
        self.market = market

    def sp_star(self, t: float) -> np.ndarray:
        """Optimal allocation target lam/(2 gamma)."""
        return self.market.sharpe_at(t) / (2.0 * self.spec.gamma)

    def u0(self, x: float) -> float:
        return three_power_value(x, 1.0, 0.0, self.spec)

    def accumulators(self, grid: TimeGrid, dw: np.ndarray):
        """(log Z, I) along an ensemble: log Z is (B, N+1), I is (N+1,)."""
        lam_path = self.market.sharpe_path(grid)
        dt = grid.dt
        log_z = np.concatenate(
            [np.zeros((dw.shape[0], 1)),
             np.cumsum(0.5 * np.einsum("bkd,kd->bk", dw, lam_path), axis=1)], axis=1)
        i_path = np.concatenate(
            [[0.0], np.cumsum(np.einsum("kd,kd->k", lam_path, lam_path) * dt)])
        return log_z, i_path

    def utility_paths(self, grid: TimeGrid, dw: np.ndarray, dwperp: np.ndarray,
                      log_x: np.ndarray) -> np.ndarray:
        """U_t(X_t) along the ensemble, shape (B, N+1)."""
        log_z, i_path = self.accumulators(grid, dw)
        g = self.spec.gamma
        i = i_path[None, :]
        l1 = (1.0 - g) * log_x - np.log(1.0 - g) - i / (8.0 * g) - log_z
        l2 = ((1.0 - 2.0 * g) * log_x - np.log(1.0 - 2.0 * g)
              - (1.0 - 2.0 * g) * i / (4.0 * g))
        l3 = ((1.0 - 3.0 * g) * log_x - np.log(1.0 - 3.0 * g)
              + (1.0 - 3.0 / (8.0 * g)) * i + log_z)
        logs = np.stack([l1, l2, l3], axis=-1)
        return signed_exp_sum(logs, np.array([1.0, -1.0, 1.0]))
