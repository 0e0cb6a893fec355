"""Command-line front end.

Exit status: 0 on success, 1 when ``--fail-on-reject`` is given and some
test rejects, 2 on malformed input (missing file, bad config field, bad
expression).  Reports are JSON with sorted keys and tables are CSV, so
identical inputs and seed give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import composite, kalman, localtime
from .coeff import DomainError, ExprSyntaxError, RegularityError, load_model
from .gof_core import TestReport, decide
from .ode import IntegrationError
from .power import PowerCurve, estimate_power, load_alternative, power_curve_eps
from .refdist import DEFAULT_ALPHAS, Distribution, quantile_table
from .registry import PATH_STATISTICS, STATISTICS, StatOptions, statistic_values, threshold_for
from .simulate import (
    TimeGrid,
    Trajectory,
    alternative_paths,
    read_trajectory_csv,
    simulate_sde,
    solve_limit_ode,
    write_trajectory_csv,
)

__all__ = ["main", "build_parser"]


class InputError(Exception):
    pass


def _alphas(alpha: float):
    return DEFAULT_ALPHAS if any(abs(a - alpha) < 1e-12 for a in DEFAULT_ALPHAS) else tuple(sorted({*DEFAULT_ALPHAS, alpha}))


TABLE_REPS = 200_000
POWER_REPS = 1000


def _table_reps(args) -> int:
    if args.table_reps is not None:
        return args.table_reps
    if args.command != "power" and args.reps is not None:
        return args.reps
    return TABLE_REPS


def _table(dist, args):
    return quantile_table(
        dist,
        alphas=_alphas(args.alpha),
        replications=_table_reps(args),
        n_steps=args.table_steps,
        seed=args.table_seed,
        use_cache=not args.no_cache,
        threads=args.threads,
    )


def _opts(args) -> StatOptions:
    return StatOptions(m=args.m, k_smooth=args.k_smooth, contrast_r=args.contrast_r, nu=args.nu, bins=args.bins)


def _write(path, text: str) -> None:
    if path is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text if text.endswith("\n") else text + "\n")


def _reports_json(reports) -> str:
    if len(reports) == 1:
        return reports[0].to_json()
    return json.dumps([json.loads(r.to_json()) for r in reports], indent=2, sort_keys=True)


def _trajectory(args, T: float) -> Trajectory:
    if args.trajectory is None:
        raise InputError("--trajectory is required")
    traj = read_trajectory_csv(args.trajectory)
    if not np.isclose(traj.grid.T, T, rtol=1e-9):
        raise InputError(f"trajectory horizon {traj.grid.T} differs from model T={T}")
    return traj


# --------------------------------------------------------------------------
# commands


def cmd_calibrate(args) -> list[TestReport]:
    table = _table(args.dist, args)
    text = table.to_json()
    if args.out:
        _write(args.out, text)
    print(f"{table.distribution}: c_{args.alpha:g} = {table.critical_value(args.alpha):.6g} ({table.replications} reps)")
    return []


def cmd_simulate(args) -> list[TestReport]:
    spec = load_model(args.model)
    grid = TimeGrid(spec.T, args.steps)
    if args.alt:
        alt = load_alternative(args.alt)
        values = alternative_paths(spec, alt.effective_h(spec, grid), grid, args.seed, [args.stream], alt.scaling)[0]
        traj = Trajectory(grid, values, args.seed, spec.fingerprint())
    else:
        traj = simulate_sde(spec, grid, args.seed, args.stream)
    if args.out is None:
        raise InputError("--out is required for simulate")
    write_trajectory_csv(traj, args.out)
    print(f"wrote {grid.n_steps + 1} nodes to {args.out}")
    return []


def _path_report(name, traj, spec, args) -> TestReport:
    opts = _opts(args)
    value = float(statistic_values(name, traj.values, spec, traj.grid, opts)[0])
    dist = PATH_STATISTICS[name].distribution
    table = None if name == "chisq" else _table(dist, args)
    c = threshold_for(name, args.alpha, spec, traj.grid, opts, table)
    diag = {"distribution": dist.value, "epsilon": spec.epsilon}
    if name in ("chisq", "chisq-weighted"):
        diag["m"] = opts.resolve_m(spec.epsilon, traj.grid)
    return TestReport(name, value, c, args.alpha, bool(value > c), diag)


def _kalman_report(args) -> TestReport:
    spec = kalman.load_linear_system(args.model)
    traj = _trajectory(args, spec.T)
    fp = kalman.kalman_filter(traj, spec)
    value = kalman.stat_kalman(traj, fp, spec)
    return decide(value, _table(Distribution.INT_SQ, args), args.alpha, "kalman", {"epsilon": spec.epsilon})


def _adf_report(args) -> TestReport:
    pm = composite.load_parametric_model(args.model)
    traj = _trajectory(args, pm.T)
    res = composite.mle(traj, pm)
    value = composite.stat_adf(traj, pm, res)
    diag = {"theta_hat": res.theta_hat, "fisher": res.fisher, "boundary": res.boundary}
    return decide(value, _table(Distribution.INT_SQ, args), args.alpha, "adf", diag)


def cmd_test(args) -> list[TestReport]:
    reports = []
    for name in args.stat:
        if name == "kalman":
            reports.append(_kalman_report(args))
        elif name == "adf":
            reports.append(_adf_report(args))
        else:
            spec = load_model(args.model)
            reports.append(_path_report(name, _trajectory(args, spec.T), spec, args))
    _write(args.out, _reports_json(reports))
    return reports


def cmd_power(args) -> list[TestReport]:
    spec = load_model(args.model)
    if args.alt is None:
        raise InputError("--alt is required for power")
    alt = load_alternative(args.alt)
    opts = _opts(args)
    name = args.stat[0]
    reps = args.reps or POWER_REPS
    if name not in PATH_STATISTICS:
        raise InputError(f"power is available for path statistics only, not {name!r}")
    table = None if name == "chisq" else _table(PATH_STATISTICS[name].distribution, args)
    if args.eps_grid:
        eps = [float(e) for e in args.eps_grid.split(",")]
        curve = power_curve_eps(name, spec, alt, eps, reps, args.seed, args.alpha, args.steps, args.threads, opts, table)
    else:
        est = estimate_power(name, spec, alt, table, reps, args.seed, args.alpha, TimeGrid(spec.T, args.steps), args.threads, opts)
        curve = PowerCurve(np.array([spec.epsilon]), np.array([est.power]), np.array([est.se]), reps, name)
    if args.out:
        curve.to_csv(args.out)
    for x, p, s in zip(curve.x_axis, curve.power, curve.se):
        print(f"{name}: eps={x:g} power={p:.4f} se={s:.4f}")
    return []


def cmd_kalman(args) -> list[TestReport]:
    spec = kalman.load_linear_system(args.model)
    if args.trajectory:
        traj = _trajectory(args, spec.T)
    else:
        traj, _ = kalman.simulate_linear_system(spec, TimeGrid(spec.T, args.steps), args.seed, args.stream)
    fp = kalman.kalman_filter(traj, spec)
    report = decide(kalman.stat_kalman(traj, fp, spec), _table(Distribution.INT_SQ, args), args.alpha, "kalman", {"epsilon": spec.epsilon})
    if args.filter_out:
        with open(args.filter_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "m", "gamma"])
            for row in zip(traj.t, traj.values, fp.M, fp.Gamma):
                w.writerow([f"{v:.17g}" for v in row])
    _write(args.out, report.to_json())
    return [report]


def cmd_localtime(args) -> list[TestReport]:
    spec = load_model(args.model)
    traj = _trajectory(args, spec.T)
    limit = solve_limit_ode(spec, traj.grid)
    grid = localtime.SpaceGrid.for_limit(limit, args.bins or localtime.auto_bins(limit, spec.epsilon))
    if args.estimator == "tanaka":
        ratio = localtime.tanaka_resolution(traj, spec)
        if ratio > 0.01:
            print(f"warning: S0^2 dt / (eps sigma)^2 = {ratio:.3g}; the Tanaka sum is biased on this grid", file=sys.stderr)
        lt = localtime.local_time_tanaka(traj, grid)
    else:
        lt = localtime.local_time_occupation(traj, spec, grid, args.nu)
    value = localtime.stat_localtime(lt, spec, limit)
    diag = {"estimator": args.estimator, "bins": grid.n_bins}
    if lt.bandwidth is not None:
        diag["nu"] = lt.bandwidth
    report = decide(value, _table(Distribution.INT_SQ, args), args.alpha, "localtime", diag)
    if args.lt_out:
        localtime.write_local_time_csv(lt, args.lt_out)
    _write(args.out, report.to_json())
    return [report]


def cmd_composite(args) -> list[TestReport]:
    pm = composite.load_parametric_model(args.model)
    if args.kl_true:
        theta, edge = composite.kl_projection(pm, args.kl_true, TimeGrid(pm.T, args.steps))
        _write(args.out, json.dumps({"theta_star": theta, "boundary": edge}, indent=2, sort_keys=True))
        return []
    report = _adf_report(args)
    _write(args.out, report.to_json())
    return [report]


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "test": cmd_test,
    "power": cmd_power,
    "kalman": cmd_kalman,
    "localtime": cmd_localtime,
    "composite": cmd_composite,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model config JSON")
    common.add_argument("--alt", help="alternative config JSON: {h, scaling, contrast, rho}")
    common.add_argument("--trajectory", help="observed path CSV with header t,x")
    common.add_argument("--stat", nargs="+", choices=STATISTICS, default=["cvm"])
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument(
        "--reps",
        type=int,
        help=f"Monte Carlo replications: simulated paths for power (default {POWER_REPS}), "
        f"reference-table size otherwise (default {TABLE_REPS})",
    )
    common.add_argument("--table-reps", type=int, help="reference-table size, overriding --reps")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--stream", type=int, default=0, help="replication index of a simulated path")
    common.add_argument("--steps", type=int, default=10_000)
    common.add_argument("--table-steps", type=int, default=2048)
    common.add_argument("--table-seed", type=int, default=0)
    common.add_argument("--m", type=int)
    common.add_argument("--k-smooth", type=int, default=2)
    common.add_argument("--contrast-r", type=float)
    common.add_argument("--nu", type=float)
    common.add_argument("--bins", type=int)
    common.add_argument("--estimator", choices=("occupation", "tanaka"), default="occupation")
    common.add_argument("--eps-grid", help="comma separated noise levels")
    common.add_argument("--dist", default="int-sq-wiener", help="reference law for calibrate")
    common.add_argument("--kl-true", help="true drift expression for the KL projection")
    common.add_argument("--out")
    common.add_argument("--lt-out", help="local-time CSV (x,lambda)")
    common.add_argument("--filter-out", help="filter CSV (t,x,m,gamma)")
    common.add_argument("--no-cache", action="store_true")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--fail-on-reject", action="store_true", help="exit with status 1 if any test rejects")

    parser = argparse.ArgumentParser(prog="smallnoise", description="Goodness-of-fit tests for small-noise diffusions")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    if not 0 < args.alpha < 1:
        print("error: --alpha must lie in (0, 1)", file=sys.stderr)
        return 2
    if args.command in ("simulate", "test", "power", "kalman", "localtime", "composite") and not args.model:
        print("error: --model is required", file=sys.stderr)
        return 2
    try:
        reports = COMMANDS[args.command](args)
    except (InputError, FileNotFoundError, KeyError, ValueError, ExprSyntaxError, DomainError, RegularityError, IntegrationError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    for r in reports:
        print(r.summary())
    if args.fail_on_reject and any(r.reject for r in reports):
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
