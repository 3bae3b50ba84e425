"""Configuration-driven command line front end.

Commands
--------
verify-fpp            martingale/supermartingale reports and a structure scan
                      for the configured mixture criterion
pool surface          closed-form expected-utility surface over (z, t)
pool optimize         best constant proportion and all local maxima
pool compare          three-strategy comparison on common random numbers
two-power drifts      consistency drifts of the coefficient processes
two-power gap         consistency gap and whether the sum is a criterion
two-power dual        closed-form dual maximiser of the double-aversion family
two-power validate    monotonicity checks on sampled power paths
three-power           discriminant table, sample paths, martingale check

Exit codes: 0 success, 1 check failure, 2 configuration error.  Output
directory resolves from --out, then $FPPLAB_OUT, then the configured value.
All CSV output is byte-stable for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import pooling, two_power
from .config import RunConfig, load_config
from .errors import ConfigError, FpplabError
from .market import TimeGrid, brownian_batch, simulate_brownian, write_paths_csv
from .mixture import MixtureFpp
from .three_power import ThreePowerFpp, ThreePowerSpec, concavity_discriminants
from .verify import (MartingaleReport, VERDICT_MARTINGALE, VERDICT_VIOLATION,
                     martingale_test, structure_scan)

N_SAMPLE_PATHS = 4  # paths dumped to per-path CSVs


def _fmt(value) -> str:
    return format(float(value), ".17g")


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_report_csv(path, report: MartingaleReport):
    margins = report.margins()
    rows = [[_fmt(t), _fmt(report.mean[k]), _fmt(report.se[k]),
             _fmt(report.reference), _fmt(margins[k])]
            for k, t in enumerate(report.t_grid)]
    _write_csv(path, ["t", "mean", "se", "reference", "margin"], rows)


# ---------------------------------------------------------------------------
# verify-fpp
# ---------------------------------------------------------------------------

def cmd_verify_fpp(cfg: RunConfig, out_dir: str, threads: int) -> int:
    grid = TimeGrid.regular(cfg.sim.horizon, cfg.sim.grid_step)
    cfg.market.validate_on(grid)
    fpp = MixtureFpp(cfg.mixture, cfg.vol, cfg.market)

    def sp_star(k, t, x):
        return fpp.sp_star(t)

    def sp_null(k, t, x):
        return np.zeros(cfg.market.d_w)

    scale = cfg.perturbed_scale

    def sp_perturbed(k, t, x):
        return scale * fpp.sp_star(t)

    runs = [("pi_star", sp_star, "martingale"),
            ("null", sp_null, "supermartingale"),
            ("perturbed", sp_perturbed, "supermartingale")]
    ok = True
    for name, rule, mode in runs:
        report = martingale_test(fpp, rule, cfg.market, grid=grid,
                                 n_paths=cfg.sim.n_paths, seed=cfg.sim.seed,
                                 mode=mode, threads=threads)
        _write_report_csv(os.path.join(out_dir, f"verify_{name}.csv"), report)
        print(f"{name}:")
        print(report.to_text())
        if mode == "martingale" and report.verdict != VERDICT_MARTINGALE:
            ok = False
        if mode == "supermartingale" and report.verdict == VERDICT_VIOLATION:
            ok = False

    # structural scan over states sampled from a small ensemble
    dw, dwp = brownian_batch(grid, cfg.market.d_w, cfg.market.d_wperp,
                             cfg.sim.seed, range(8))
    m, qv, v = fpp.state_paths(grid, dw, dwp)
    picks = [(b, k) for b in range(m.shape[0])
             for k in (grid.n_steps // 2, grid.n_steps)]
    states = [(m[b, k], qv[k], v[k]) for b, k in picks]

    def evaluate(state, x):
        from .mixture import mixture_value
        sm, sqv, sv = state
        return mixture_value(cfg.mixture.gammas, cfg.mixture.weights, x, sm, sqv, sv)

    x_grid = np.geomspace(0.05, 20.0, 25)
    scan = structure_scan(evaluate, states, x_grid)
    print(scan.to_text())
    ok = ok and scan.passed

    # per-path criterion states for a handful of paths
    rows = []
    for b, pid in enumerate(range(min(N_SAMPLE_PATHS, m.shape[0]))):
        for k, t in enumerate(grid.times):
            u = evaluate((m[b, k], qv[k], v[k]), np.array([1.0]))[0]
            for a in range(cfg.mixture.n_atoms):
                rows.append([pid, _fmt(t), a, _fmt(m[b, k, a]), _fmt(qv[k, a]),
                             _fmt(v[k, a]), _fmt(u)])
    _write_csv(os.path.join(out_dir, "fpp_states.csv"),
               ["path_id", "t", "atom", "m", "qv_m", "v", "utility"], rows)
    bundles = [simulate_brownian(grid, cfg.market.d_w, cfg.market.d_wperp,
                                 cfg.sim.seed, pid) for pid in range(N_SAMPLE_PATHS)]
    write_paths_csv(os.path.join(out_dir, "brownian_paths.csv"), grid, bundles)
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# pool
# ---------------------------------------------------------------------------

def cmd_pool(cfg: RunConfig, out_dir: str, subaction: str, t_flag, preset_name,
             n_paths, seed) -> int:
    spec = pooling.preset(preset_name) if preset_name else cfg.pool
    label = preset_name or "config"
    if subaction == "surface":
        z_grid = np.linspace(0.01, 0.99, 100)
        t_grid = np.arange(1.0, spec.horizon + 0.5, 1.0)
        surface = pooling.utility_surface(spec, z_grid, t_grid)
        rows = [[_fmt(z), _fmt(t), _fmt(surface.values[i, j])]
                for i, t in enumerate(t_grid) for j, z in enumerate(z_grid)]
        path = os.path.join(out_dir, f"pool_surface_{label}.csv")
        _write_csv(path, ["z", "t", "value"], rows)
        print(f"surface written to {path}")
        return 0
    if subaction == "optimize":
        t = t_flag if t_flag is not None else spec.horizon
        result = pooling.optimize_constant_z(spec, t)
        print(f"z_star = {result.z_star:.6f} (value {result.value:.9g}) at t = {t:g}")
        for z, val in result.local_maxima:
            print(f"  local maximum: z = {z:.6f}, value = {val:.9g}")
        return 0
    if subaction == "compare":
        result = pooling.compare_strategies(spec, n_paths=n_paths, seed=seed)
        rows = []
        for name, stats in result.strategies.items():
            for k, t in enumerate(result.t_grid):
                alloc = _fmt(stats.mean_allocation[k]) \
                    if k < stats.mean_allocation.size else ""
                rows.append([_fmt(t), name, _fmt(stats.mean_utility[k]),
                             _fmt(stats.se_utility[k]), alloc])
        path = os.path.join(out_dir, f"pool_comparison_{label}.csv")
        _write_csv(path, ["t", "strategy", "mean_utility", "se", "mean_allocation"],
                   rows)
        print(f"comparison written to {path} (z_star = {result.z_star:.6f})")
        return 0
    raise ConfigError(f"unknown pool subaction {subaction!r}")


# ---------------------------------------------------------------------------
# two-power
# ---------------------------------------------------------------------------

def cmd_two_power(cfg: RunConfig, subaction: str, y_flag, gamma_flag,
                  file_flag) -> int:
    spec = cfg.two_power
    lam = cfg.market.sharpe_at(0.0)
    if subaction == "drifts":
        alpha, delta = two_power.coefficient_drifts(spec.p, spec.q, lam,
                                                    spec.a_vol, spec.d_vol)
        print(f"alpha = {alpha:.9g}")
        print(f"delta = {delta:.9g}")
        return 0
    if subaction == "gap":
        gap = two_power.consistency_gap(spec.p, spec.q, lam, spec.a_vol, spec.d_vol)
        print(f"consistency gap = {gap:.12g}")
        print("FPP: yes" if gap < 1e-12 else "FPP: no")
        return 0
    if subaction == "dual":
        if y_flag is None:
            raise ConfigError("two-power dual requires --y")
        gamma = gamma_flag if gamma_flag is not None else 0.25
        x_star, value = two_power.legendre_dual(y_flag, spec.a0, spec.d0, gamma)
        print(f"x_star = {x_star:.12g}")
        print(f"dual value = {value:.12g}")
        return 0
    if subaction == "validate":
        if file_flag is None:
            raise ConfigError("two-power validate requires --file")
        p_path, q_path = _read_power_paths(file_flag)
        report = two_power.validate_power_paths(p_path, q_path)
        print(report.to_text())
        return 0 if report.ok else 1
    raise ConfigError(f"unknown two-power subaction {subaction!r}")


def _read_power_paths(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"p", "q"} <= set(reader.fieldnames):
                raise ConfigError(f"{path}: need columns 'p' and 'q'")
            p_path, q_path = [], []
            for row in reader:
                p_path.append(float(row["p"]))
                q_path.append(float(row["q"]))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return p_path, q_path


# ---------------------------------------------------------------------------
# three-power
# ---------------------------------------------------------------------------

def cmd_three_power(cfg: RunConfig, out_dir: str, gamma_flag, threads: int) -> int:
    try:
        spec = ThreePowerSpec(gamma=gamma_flag) if gamma_flag is not None \
            else cfg.three_power
    except ValueError as exc:
        raise ConfigError(f"three_power.gamma: {exc}") from exc
    grid_gammas = np.linspace(1.0 / 3.0 / 51.0, 1.0 / 3.0 * 50.0 / 51.0, 50)
    rows = []
    for g in grid_gammas:
        mono, conc = concavity_discriminants(float(g))
        rows.append([_fmt(g), _fmt(mono), _fmt(conc)])
    disc_path = os.path.join(out_dir, "three_power_discriminants.csv")
    _write_csv(disc_path, ["gamma", "disc_monotone", "disc_concave"], rows)
    mono, conc = concavity_discriminants(spec.gamma)
    print(f"gamma = {spec.gamma:g}: discriminants ({mono:.9g}, {conc:.9g})")

    fpp = ThreePowerFpp(spec, cfg.market)
    grid = TimeGrid.regular(cfg.sim.horizon, cfg.sim.grid_step)

    def sp_star(k, t, x):
        return fpp.sp_star(t)

    report = martingale_test(fpp, sp_star, cfg.market, grid=grid,
                             n_paths=cfg.sim.n_paths, seed=cfg.sim.seed,
                             mode="martingale", threads=threads)
    _write_report_csv(os.path.join(out_dir, "three_power_martingale.csv"), report)
    print(f"martingale check at the optimiser: {report.verdict}")

    dw, _ = brownian_batch(grid, cfg.market.d_w, cfg.market.d_wperp,
                           cfg.sim.seed, range(N_SAMPLE_PATHS))
    log_z, i_path = fpp.accumulators(grid, dw)
    from .three_power import three_power_value
    xs = cfg.three_power_x
    rows = []
    for b in range(dw.shape[0]):
        for k, t in enumerate(grid.times):
            row = [b, _fmt(t), _fmt(np.exp(log_z[b, k])), _fmt(i_path[k])]
            row += [_fmt(three_power_value(x, np.exp(log_z[b, k]), i_path[k], spec))
                    for x in xs]
            rows.append(row)
    header = ["path_id", "t", "Z", "I"] + [f"U_x={x:g}" for x in xs]
    _write_csv(os.path.join(out_dir, "three_power_paths.csv"), header, rows)
    return 0 if report.verdict == VERDICT_MARTINGALE else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    """Register the shared flags; they are accepted before or after a command."""
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", metavar="PATH",
                        help="YAML configuration file", **kw)
    parser.add_argument("--seed", type=int, help="override simulation.seed", **kw)
    parser.add_argument("--paths", type=int, help="override simulation.n_paths", **kw)
    parser.add_argument("--out", metavar="DIR", help="output directory", **kw)
    parser.add_argument("--threads", type=int,
                        help="worker pool size (results do not depend on it)",
                        **(kw if suppress else {"default": os.cpu_count()}))
    parser.add_argument("--preset", metavar="NAME",
                        help="named parameter bundle (pool: fig1..fig4; "
                             "verify-fpp: power_base)", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpplab",
        description="simulation and verification lab for power-mixture "
                    "forward performance criteria")
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    verify_p = sub.add_parser("verify-fpp", help="martingale and structure checks")
    pool_p = sub.add_parser("pool", help="pooled-investment analysis")
    pool_p.add_argument("subaction", choices=["surface", "optimize", "compare"])
    pool_p.add_argument("--t", type=float, help="horizon for optimize")
    tp = sub.add_parser("two-power", help="two-power mixture tools")
    tp.add_argument("subaction", choices=["drifts", "gap", "dual", "validate"])
    tp.add_argument("--y", type=float, help="marginal utility for dual")
    tp.add_argument("--gamma", type=float, help="aversion for dual")
    tp.add_argument("--file", help="CSV of power paths for validate")
    th = sub.add_parser("three-power", help="signed three-power construction")
    th.add_argument("--gamma", type=float, help="override three_power.gamma")
    for sp in (verify_p, pool_p, tp, th):
        _add_global_flags(sp, suppress=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {}
        if args.seed is not None:
            overrides.setdefault("simulation", {})["seed"] = args.seed
        if args.paths is not None:
            overrides.setdefault("simulation", {})["n_paths"] = args.paths
        mixture_preset = args.preset if args.command == "verify-fpp" else None
        cfg = load_config(args.config, overrides=overrides,
                          mixture_preset=mixture_preset)
        out_dir = args.out or os.environ.get("FPPLAB_OUT") or cfg.output_dir
        os.makedirs(out_dir, exist_ok=True)
        if args.command == "verify-fpp":
            return cmd_verify_fpp(cfg, out_dir, args.threads)
        if args.command == "pool":
            if args.preset is not None and args.preset not in pooling.POOL_PRESETS:
                raise ConfigError(f"--preset: unknown pool preset {args.preset!r}")
            return cmd_pool(cfg, out_dir, args.subaction, args.t, args.preset,
                            n_paths=args.paths or 1000, seed=cfg.sim.seed)
        if args.command == "two-power":
            return cmd_two_power(cfg, args.subaction, args.y, args.gamma, args.file)
        if args.command == "three-power":
            return cmd_three_power(cfg, out_dir, args.gamma, args.threads)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FpplabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
