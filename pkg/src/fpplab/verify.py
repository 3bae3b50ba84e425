"""Monte Carlo martingale/supermartingale tests and structural scans.

A criterion promises three things: concavity and monotonicity in wealth, a
supermartingale along every admissible strategy, and a martingale along the
optimal one.  The tests here operationalise all three at sampling precision:
ensemble means are compared against the initial value with a 3-standard-error
band at every grid time, competing strategies ride identical Brownian
increments (common random numbers), and finite differences scan the wealth
direction.  A passing report is consistency at the stated tolerance, never a
proof.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .market import MarketSpec, TimeGrid, brownian_batch, evolve_log_wealth_batch

SE_MULTIPLE = 3.0
NEGINF_WARN_FRACTION = 1e-3
DEFAULT_BATCH = 20_000

VERDICT_MARTINGALE = "consistent-with-martingale"
VERDICT_SUPER_STRICT = "supermartingale-strict"
VERDICT_VIOLATION = "violation"


@dataclass(frozen=True)
class MartingaleReport:
    """Per-time ensemble means of U_t(X_t) against the reference U_0(x0)."""

    t_grid: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    reference: float
    verdict: str
    mode: str
    n_paths: int
    seed: int
    kurtosis_terminal: float
    warnings: tuple[str, ...] = ()

    def margins(self) -> np.ndarray:
        """Slack of each grid time against its acceptance band (>= 0 passes)."""
        band = SE_MULTIPLE * self.se
        if self.mode == "martingale":
            return band - np.abs(self.mean - self.reference)
        return self.reference + band - self.mean

    def to_text(self) -> str:
        lines = [f"{self.mode} test: verdict={self.verdict} "
                 f"(n_paths={self.n_paths}, seed={self.seed})",
                 f"  reference U0 = {self.reference:.9g}",
                 f"  terminal mean = {self.mean[-1]:.9g} +- {self.se[-1]:.3g}",
                 f"  worst margin = {float(np.min(self.margins()[1:])):.3g}",
                 f"  terminal kurtosis = {self.kurtosis_terminal:.3g}"]
        lines += [f"  warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def _batch_moments(fpp, sp_rule, market, grid, seed, path_ids, x0):
    dw, dwp = brownian_batch(grid, market.d_w, market.d_wperp, seed, path_ids)
    lam_path = market.sharpe_path(grid)
    log_x = evolve_log_wealth_batch(x0, sp_rule, lam_path, grid, dw)
    u = fpp.utility_paths(grid, dw, dwp, log_x)
    neg_inf = int(np.sum(np.isneginf(u).any(axis=1)))
    finite = np.where(np.isfinite(u), u, 0.0)  # diverged paths counted, zeroed
    return finite.sum(axis=0), (finite ** 2).sum(axis=0), neg_inf, u[:, -1]


def martingale_test(fpp, sp_rule: Callable, market: MarketSpec, *, grid: TimeGrid,
                    n_paths: int, seed: int, mode: str = "martingale",
                    x0: float = 1.0, batch_size: int = DEFAULT_BATCH,
                    threads: int = None) -> MartingaleReport:
    """Ensemble test of E[U_t(X_t)] against U_0(x0).

    ``fpp`` exposes ``utility_paths(grid, dw, dwperp, log_x)`` and ``u0(x)``;
    ``sp_rule(k, t, x_vec)`` supplies sigma*pi per grid cell.  In martingale
    mode the verdict is consistent iff every grid time stays inside the
    3-standard-error band around U_0; in supermartingale mode the mean must
    stay below U_0 plus the band everywhere, with a strict verdict when the
    terminal mean separates below by more than the band.

    Batches are combined in fixed order, so the report is bit-identical for
    any ``threads`` setting.
    """
    if mode not in ("martingale", "supermartingale"):
        raise ValueError(f"unknown mode {mode!r}")
    if n_paths < 2:
        raise ValueError("need at least two paths")
    n_times = grid.n_steps + 1
    batches = [range(lo, min(lo + batch_size, n_paths))
               for lo in range(0, n_paths, batch_size)]

    def work(ids):
        return _batch_moments(fpp, sp_rule, market, grid, seed, ids, x0)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, batches))
    else:
        results = [work(ids) for ids in batches]

    s1 = np.zeros(n_times)
    s2 = np.zeros(n_times)
    terminal_parts = []
    neg_inf = 0
    for bs1, bs2, bneg, bterm in results:  # fixed order keeps reduction deterministic
        s1 += bs1
        s2 += bs2
        neg_inf += bneg
        terminal_parts.append(bterm)
    mean = s1 / n_paths
    var = np.maximum(s2 / n_paths - mean ** 2, 0.0) * n_paths / (n_paths - 1)
    se = np.sqrt(var / n_paths)
    terminal = np.concatenate(terminal_parts)
    t_fin = terminal[np.isfinite(terminal)]
    if t_fin.size > 3 and np.std(t_fin) > 0:
        zc = (t_fin - t_fin.mean()) / t_fin.std()
        kurt = float(np.mean(zc ** 4))
    else:
        kurt = float("nan")

    reference = float(fpp.u0(x0))
    band = SE_MULTIPLE * se[1:]
    dev = mean[1:] - reference
    if mode == "martingale":
        ok = bool(np.all(np.abs(dev) <= band))
        verdict = VERDICT_MARTINGALE if ok else VERDICT_VIOLATION
    else:
        ok = bool(np.all(dev <= band))
        if not ok:
            verdict = VERDICT_VIOLATION
        elif dev[-1] < -band[-1]:
            verdict = VERDICT_SUPER_STRICT
        else:
            verdict = VERDICT_MARTINGALE
    warnings = ()
    if neg_inf > NEGINF_WARN_FRACTION * n_paths:
        warnings = (f"degenerate utility: {neg_inf} of {n_paths} paths hit -inf",)
    return MartingaleReport(t_grid=grid.times.copy(), mean=mean, se=se,
                            reference=reference, verdict=verdict, mode=mode,
                            n_paths=n_paths, seed=seed, kurtosis_terminal=kurt,
                            warnings=warnings)


# ---------------------------------------------------------------------------
# Structural scan in the wealth direction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureReport:
    passed: bool
    worst_increase_margin: float   # min first divided difference (> 0 required)
    worst_concavity_margin: float  # max second divided difference (< 0 required)
    worst_state_index: int

    def to_text(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"structure scan: {status} "
                f"(min dU = {self.worst_increase_margin:.3e}, "
                f"max d2U = {self.worst_concavity_margin:.3e}, "
                f"worst state {self.worst_state_index})")


def structure_scan(evaluate: Callable, states: Sequence, x_grid) -> StructureReport:
    """Check that x -> evaluate(state, x) is increasing and strictly concave.

    ``x_grid`` must be log-spaced with at least 8 points; divided differences
    handle the uneven spacing.  The worst margins across all states are
    reported.
    """
    x = np.asarray(x_grid, float)
    if x.size < 8:
        raise ValueError("need at least 8 grid points")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x grid must be strictly increasing")
    worst_inc = np.inf
    worst_conc = -np.inf
    worst_idx = -1
    for idx, state in enumerate(states):
        u = np.asarray(evaluate(state, x), float)
        first = (u[2:] - u[:-2]) / (x[2:] - x[:-2])
        h_plus = x[2:] - x[1:-1]
        h_minus = x[1:-1] - x[:-2]
        second = 2.0 * ((u[2:] - u[1:-1]) / h_plus - (u[1:-1] - u[:-2]) / h_minus) \
            / (h_plus + h_minus)
        inc = float(np.min(first))
        conc = float(np.max(second))
        if inc < worst_inc or conc > worst_conc:
            worst_idx = idx
        worst_inc = min(worst_inc, inc)
        worst_conc = max(worst_conc, conc)
    return StructureReport(passed=bool(worst_inc > 0.0 and worst_conc < 0.0),
                           worst_increase_margin=worst_inc,
                           worst_concavity_margin=worst_conc,
                           worst_state_index=worst_idx)
