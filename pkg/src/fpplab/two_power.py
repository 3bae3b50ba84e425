"""Two-power mixtures U_t(x) = A_t x^p + D_t x^q with constant powers in (0,1).

For strictly positive coefficient semimartingales

    dA = alpha A dt + a A . dW + a_perp A . dW_perp   (likewise D),

the sum is a consistent criterion exactly when the coefficient drifts equal

    alpha = -p/(2(1-p)) |lam + a|^2,   delta = -q/(2(1-q)) |lam + d|^2,

and the consistency gap |(lam + a)/(1-p) - (lam + d)/(1-q)| vanishes, in
which case both summands are power criteria sharing one optimal portfolio.
Away from zero gap the joint drift at the pointwise optimiser is strictly
negative: the per-unit-time cost of pooling.

The module also ships validators for the random-power necessary conditions
(p nondecreasing, q nonincreasing, constant p forces constant q) and the
closed-form Legendre dual of the (1-2g, 1-g) double-aversion family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .market import TimeGrid, solve_allocation

POWER_PATH_TOL = 1e-12  # monotonicity slack for sampled power paths


@dataclass(frozen=True)
class TwoPowerSpec:
    """Powers, initial coefficients, and coefficient volatility loadings."""

    p: float
    q: float
    a0: float
    d0: float
    a_vol: np.ndarray    # (d_w,) loading of A on W
    d_vol: np.ndarray    # (d_w,)
    a_perp: np.ndarray   # (d_wperp,) loading of A on W_perp
    d_perp: np.ndarray   # (d_wperp,)

    def __post_init__(self):
        for name in ("a_vol", "d_vol", "a_perp", "d_perp"):
            object.__setattr__(self, name,
                               np.atleast_1d(np.asarray(getattr(self, name), float)))
        if not (0.0 < self.p < self.q < 1.0):
            raise ValueError(f"need 0 < p < q < 1, got p={self.p}, q={self.q}")
        if self.a0 <= 0 or self.d0 <= 0:
            raise ValueError("initial coefficients must be strictly positive")

    @classmethod
    def basic(cls, p, q, a0=1.0, d0=1.0, d_w=1, d_wperp=0) -> "TwoPowerSpec":
        z = np.zeros(d_w)
        zp = np.zeros(d_wperp)
        return cls(p=p, q=q, a0=a0, d0=d0, a_vol=z, d_vol=z, a_perp=zp, d_perp=zp)


def coefficient_drifts(p: float, q: float, lam, a_vol, d_vol) -> tuple[float, float]:
    """Necessary drifts (alpha, delta) of the two coefficient processes."""
    if not (0.0 < p < 1.0 and 0.0 < q < 1.0):
        raise ValueError("powers must lie in (0, 1)")
    la = np.atleast_1d(lam) + np.atleast_1d(a_vol)
    ld = np.atleast_1d(lam) + np.atleast_1d(d_vol)
    alpha = -p / (2.0 * (1.0 - p)) * float(la @ la)
    delta = -q / (2.0 * (1.0 - q)) * float(ld @ ld)
    return alpha, delta


def consistency_gap(p: float, q: float, lam, a_vol, d_vol) -> float:
    """Norm of (lam + a)/(1-p) - (lam + d)/(1-q); zero iff the sum is consistent."""
    if not (0.0 < p < 1.0 and 0.0 < q < 1.0):
        raise ValueError("powers must lie in (0, 1)")
    la = (np.atleast_1d(lam) + np.atleast_1d(a_vol)) / (1.0 - p)
    ld = (np.atleast_1d(lam) + np.atleast_1d(d_vol)) / (1.0 - q)
    return float(np.linalg.norm(la - ld))


def zero_gap_d_vol(p: float, q: float, lam, a_vol) -> np.ndarray:
    """The unique d loading closing the consistency gap for given (p, q, lam, a)."""
    lam = np.atleast_1d(np.asarray(lam, float))
    return (1.0 - q) / (1.0 - p) * (lam + np.atleast_1d(a_vol)) - lam


def _log_side_weights(p, q, a_coeff, d_coeff, x):
    """log of the positive weights p(1-p)A x^p and q(1-q)D x^q."""
    lx = np.log(float(x))
    wu = np.log(p * (1.0 - p) * a_coeff) + p * lx
    wv = np.log(q * (1.0 - q) * d_coeff) + q * lx
    return wu, wv


def mixture_sp_target(p: float, q: float, a_coeff: float, d_coeff: float, x: float,
                      lam, a_vol, d_vol) -> np.ndarray:
    """State-feedback allocation target sigma*pi for the joint criterion.

    A convex combination of the two one-power targets (lam+a)/(1-p) and
    (lam+d)/(1-q) with weights p(1-p)A x^p and q(1-q)D x^q, evaluated in log
    space so extreme wealth cannot overflow.
    """
    if x <= 0 or a_coeff <= 0 or d_coeff <= 0:
        raise ValueError("wealth and coefficients must be positive")
    ta = (np.atleast_1d(lam) + np.atleast_1d(a_vol)) / (1.0 - p)
    td = (np.atleast_1d(lam) + np.atleast_1d(d_vol)) / (1.0 - q)
    wu, wv = _log_side_weights(p, q, a_coeff, d_coeff, x)
    # weight of the p side in (0, 1)
    omega = 1.0 / (1.0 + np.exp(wv - wu))
    return omega * ta + (1.0 - omega) * td


def mixture_portfolio(p: float, q: float, a_coeff: float, d_coeff: float, x: float,
                      lam, a_vol, d_vol, sigma) -> np.ndarray:
    """Solve sigma pi = mixture_sp_target(...) for pi by pseudoinverse."""
    target = mixture_sp_target(p, q, a_coeff, d_coeff, x, lam, a_vol, d_vol)
    return solve_allocation(sigma, target)


def joint_drift(p: float, q: float, a_coeff: float, d_coeff: float, x: float,
                lam, a_vol, d_vol) -> float:
    """Drift of the joint criterion at its pointwise optimiser; <= 0 always.

        - pq(1-p)(1-q) A D x^(p+q) / (p(1-p)A x^p + q(1-q)D x^q) * gap^2

    Zero exactly when the consistency gap vanishes; the magnitude is the
    instantaneous cost of pooling the two investors.
    """
    if x <= 0 or a_coeff <= 0 or d_coeff <= 0:
        raise ValueError("wealth and coefficients must be positive")
    gap = consistency_gap(p, q, lam, a_vol, d_vol)
    if gap == 0.0:
        return 0.0
    wu, wv = _log_side_weights(p, q, a_coeff, d_coeff, x)
    log_num = (np.log(p * q * (1.0 - p) * (1.0 - q)) + np.log(a_coeff)
               + np.log(d_coeff) + (p + q) * np.log(x))
    log_den = np.logaddexp(wu, wv)
    return float(-np.exp(log_num - log_den) * gap ** 2)


def legendre_dual(y: float, a_coeff: float, d_coeff: float,
                  gamma: float) -> tuple[float, float]:
    """Closed-form dual of U(x) = A x^(1-2g)/(1-2g) + D x^(1-g)/(1-g), g in (0, 1/2).

    Returns the maximiser x* = ((-D + sqrt(D^2 + 4Ay)) / (2A))^(-1/g) of
    U(x) - xy and the dual value there; the first-order condition
    A x*^(-2g) + D x*^(-g) = y holds to machine precision.
    """
    if y <= 0:
        raise ValueError("marginal utility y must be positive")
    if a_coeff <= 0 or d_coeff <= 0:
        raise ValueError("coefficients must be positive")
    if not (0.0 < gamma < 0.5):
        raise ValueError("gamma must lie in (0, 1/2) so both powers are in (0, 1)")
    # (-D + sqrt(D^2 + 4Ay)) / (2A) in its cancellation-free form
    root = 2.0 * y / (d_coeff + np.sqrt(d_coeff ** 2 + 4.0 * a_coeff * y))
    x_star = float(root ** (-1.0 / gamma))
    u = (a_coeff * x_star ** (1.0 - 2.0 * gamma) / (1.0 - 2.0 * gamma)
         + d_coeff * x_star ** (1.0 - gamma) / (1.0 - gamma))
    return x_star, float(u - x_star * y)


def dual_marginal(x: float, a_coeff: float, d_coeff: float, gamma: float) -> float:
    """U'(x) = A x^(-2g) + D x^(-g) for the double-aversion family."""
    return float(a_coeff * x ** (-2.0 * gamma) + d_coeff * x ** (-gamma))


# ---------------------------------------------------------------------------
# Coefficient path simulation
# ---------------------------------------------------------------------------

def evolve_coefficients(spec: TwoPowerSpec, grid: TimeGrid, lam_path: np.ndarray,
                        dw: np.ndarray, dwperp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Simulate (A_t, D_t) with the consistency drifts and the spec's loadings.

    ``dw`` is (B, N, d_w), ``dwperp`` (B, N, d_wperp); returns two (B, N+1)
    arrays.  Loadings are constant; drifts follow the Sharpe path.
    """
    n_paths, n_steps, _ = dw.shape
    dt = grid.dt
    qa = float(spec.a_vol @ spec.a_vol + spec.a_perp @ spec.a_perp)
    qd = float(spec.d_vol @ spec.d_vol + spec.d_perp @ spec.d_perp)
    log_a = np.empty((n_paths, n_steps + 1))
    log_d = np.empty((n_paths, n_steps + 1))
    log_a[:, 0] = np.log(spec.a0)
    log_d[:, 0] = np.log(spec.d0)
    for k in range(n_steps):
        alpha, delta = coefficient_drifts(spec.p, spec.q, lam_path[k],
                                          spec.a_vol, spec.d_vol)
        noise_a = dw[:, k] @ spec.a_vol
        noise_d = dw[:, k] @ spec.d_vol
        if dwperp.shape[2]:
            noise_a = noise_a + dwperp[:, k] @ spec.a_perp
            noise_d = noise_d + dwperp[:, k] @ spec.d_perp
        log_a[:, k + 1] = log_a[:, k] + (alpha - 0.5 * qa) * dt[k] + noise_a
        log_d[:, k + 1] = log_d[:, k] + (delta - 0.5 * qd) * dt[k] + noise_d
    return np.exp(log_a), np.exp(log_d)


def joint_utility(spec: TwoPowerSpec, a_path: np.ndarray, d_path: np.ndarray,
                  x_path: np.ndarray) -> np.ndarray:
    """A_t x^p + D_t x^q elementwise along paths."""
    return a_path * x_path ** spec.p + d_path * x_path ** spec.q


# ---------------------------------------------------------------------------
# Random-power validators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerPathViolation:
    index: int
    quantity: str
    value: float

    def __str__(self):
        return f"index {self.index}: {self.quantity} = {self.value:.6e}"


@dataclass(frozen=True)
class PowerPathReport:
    ok: bool
    violations: tuple[PowerPathViolation, ...]

    def to_text(self) -> str:
        if self.ok:
            return "power paths: ok"
        lines = ["power paths: violations found"]
        lines += [f"  {v}" for v in self.violations]
        return "\n".join(lines)


def validate_power_paths(p_path: Sequence[float], q_path: Sequence[float],
                         tol: float = POWER_PATH_TOL) -> PowerPathReport:
    """Check sampled power paths against the necessary conditions.

    p may only rise, q may only fall, p_t < q_t throughout; and if p is
    constant (to tolerance) then q must be constant as well.
    """
    p = np.asarray(p_path, float)
    q = np.asarray(q_path, float)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError("p_path and q_path must be 1-d of equal length")
    bad: list[PowerPathViolation] = []
    dp = np.diff(p)
    dq = np.diff(q)
    for i in np.nonzero(dp < -tol)[0]:
        bad.append(PowerPathViolation(int(i) + 1, "p decrease", float(dp[i])))
    for i in np.nonzero(dq > tol)[0]:
        bad.append(PowerPathViolation(int(i) + 1, "q increase", float(dq[i])))
    for i in np.nonzero(p >= q)[0]:
        bad.append(PowerPathViolation(int(i), "p >= q", float(p[i] - q[i])))
    if p.size and np.max(np.abs(p - p[0])) <= tol:
        drift = np.abs(q - q[0])
        if np.max(drift) > tol:
            i = int(np.argmax(drift))
            bad.append(PowerPathViolation(i, "q varies while p constant",
                                          float(q[i] - q[0])))
    bad.sort(key=lambda viol: viol.index)
    return PowerPathReport(ok=not bad, violations=tuple(bad))
