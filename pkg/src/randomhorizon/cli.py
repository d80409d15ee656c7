"""Command-line front end.

Subcommands ``solve``, ``sweep``, ``strategy`` and ``selftest`` write CSV files
into ``--out`` and finish with ``manifest.json``, written atomically as the
completion marker.

Exit codes: 0 success, 2 usage or config error, 3 solver non-convergence,
4 selftest failure.
"""

from __future__ import annotations

import argparse
import logging
import subprocess
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from ._io import write_json_atomic
from .assemble import assemble_g_solution, bsde_claim_path, write_g_solution_csv
from .bsde import ConvergenceError, solve_truncated, write_solution_csv
from .finance import (
    normalize_levels,
    optimal_strategy,
    simulate_wealth,
    sweep,
    write_strategy_csv,
    write_sweep_csv,
    write_wealth_csv,
)
from .model import ConfigError, ValidatedConfig, dump_config, load_config, max_truncation, study_config, validate
from .oracles import format_reports, run_selftest, write_selftest_csv
from .paths import DefaultSample, ResourceError, claim_at_time, default_times_for, generate_ensemble, write_paths_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NONCONVERGENCE = 3
EXIT_SELFTEST = 4

DEFAULT_LEVELS = "0,1,2,10,50"

log = logging.getLogger("randomhorizon")


class UsageError(Exception):
    pass


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def parse_levels(text: str) -> list[int]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise UsageError("--levels needs at least one truncation level")
    try:
        return [int(p) for p in parts]
    except ValueError as exc:
        raise UsageError(f"--levels: {exc}") from exc


def _load(args: argparse.Namespace) -> ValidatedConfig:
    if args.config is None:
        if args.command != "selftest":
            raise UsageError("--config is required")
        vc = validate(study_config())
    else:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        vc = load_config(path)
    if getattr(args, "driver_variant", None):
        vc = validate(replace(vc.config, driver_variant=args.driver_variant))
    if getattr(args, "n", None) is not None:
        vc = vc.with_truncation(args.n)
    return vc


def _manifest(args, vc: ValidatedConfig, outputs: list[Path], results: dict, started: float) -> Path:
    payload = {
        "subcommand": args.command,
        "version": version_string(),
        "seed": vc.disc.seed,
        "config": dump_config(vc) if vc.claim.kind != "deterministic" else None,
        "wall_time_s": round(time.perf_counter() - started, 3),
        "outputs": [p.name for p in outputs],
        "results": results,
    }
    return write_json_atomic(Path(args.out) / "manifest.json", payload)


def cmd_solve(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    vc = _load(args)
    out = Path(args.out)
    ens = generate_ensemble(vc, threads=args.threads)
    _check_path_index(args.path_index, ens.n_paths)
    sol = solve_truncated(vc, ens)
    n = sol.truncation_n
    outputs = [write_solution_csv(sol, args.path_index, out / f"bsde_n{n}.csv")]
    if args.dump_paths:
        outputs.append(write_paths_csv(ens, out / "paths.csv", [args.path_index]))
    results = {
        "n": n,
        "y0": sol.y0,
        "y0_se": sol.y0_se,
        "picard_iters": sol.picard_iters_used,
        "driver_variant": sol.driver_variant,
        "y_update": sol.y_update,
    }
    _manifest(args, vc, outputs, results, started)
    print(f"n={n} y0={sol.y0:.6f} (se {sol.y0_se:.2g}, {sol.picard_iters_used} Picard iterations)")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    vc = _load(args)
    levels = parse_levels(args.levels)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        levels = normalize_levels(levels, max_truncation(vc.T, vc.n_steps))
    for w in caught:
        log.warning("%s", w.message)
    result = sweep(vc, levels, x=args.wealth, threads=args.threads)
    outputs = [write_sweep_csv(result, Path(args.out) / "sweep.csv")]
    results = {
        "driver_variant": result.driver_variant,
        "x": result.x,
        "rows": [
            {"n": r.n, "p_n": r.p_n, "y0": r.y0, "y0_se": r.y0_se, "V": r.V, "P_n": r.P_n, "P_se": r.P_se}
            for r in result.rows
        ],
    }
    _manifest(args, vc, outputs, results, started)
    for r in result.rows:
        print(f"n={r.n:<4d} p_n={r.p_n:.6f} y0={r.y0:+.6f} V={r.V:.6f} P_n={r.P_n:.6f}")
    return EXIT_OK


def cmd_strategy(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    vc = _load(args)
    out = Path(args.out)
    ens = generate_ensemble(vc, threads=args.threads)
    p = args.path_index
    _check_path_index(p, ens.n_paths)
    sol = solve_truncated(vc, ens)
    sol0 = solve_truncated(vc, ens, 0)
    n = sol.truncation_n
    if args.tau_seed is None:
        phi = float(ens.phi[p])
    else:
        phi = float(np.random.default_rng(args.tau_seed).standard_exponential())
    tau = float(default_times_for(vc.intensity, np.array([phi]), vc.T)[0])
    sample = DefaultSample(phi=phi, tau_n=tau, hit_before_T=tau < vc.T, n=n)

    gsol = assemble_g_solution(sol, p, sample, bsde_claim_path(vc, ens, p), claim_at_time(vc, ens, p, tau))
    p_star = optimal_strategy(sol.Z[p], vc.market.theta, vc.alpha, vc.constraint, tau, vc.times)
    p_free = optimal_strategy(sol0.Z[p], vc.market.theta, vc.alpha, vc.constraint, vc.T, vc.times)
    wealth = simulate_wealth(p_star, ens.dW[p], vc.market.theta, vc.dt, x=args.wealth)

    outputs = [
        write_strategy_csv(vc.times, p_star, p_free, out / "strategy.csv"),
        write_wealth_csv(vc.times, wealth, out / "wealth.csv"),
        write_g_solution_csv(gsol, out / "g_solution.csv"),
    ]
    if args.dump_paths:
        outputs.append(write_paths_csv(ens, out / "paths.csv", [p]))
    results = {
        "n": n,
        "path_index": p,
        "tau_n": tau,
        "defaulted": gsol.defaulted,
        "xi_a_tau": gsol.post_default_value,
        "y0": sol.y0,
        "y0_no_default": sol0.y0,
        "X_T": float(wealth[-1]),
        "driver_variant": sol.driver_variant,
    }
    _manifest(args, vc, outputs, results, started)
    print(f"n={n} path={p} tau={tau:.6f} xi_a(tau)={gsol.post_default_value:.6f} X_T={wealth[-1]:.6f}")
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    vc = _load(args)
    reports = run_selftest(vc, tolerance_scale=args.tolerance_scale)
    outputs = [write_selftest_csv(reports, Path(args.out) / "selftest.csv")]
    ok = all(r.passed for r in reports)
    results = {"passed": ok, "failed": [r.name for r in reports if not r.passed]}
    _manifest(args, vc, outputs, results, started)
    print(format_reports(reports))
    return EXIT_OK if ok else EXIT_SELFTEST


def _check_path_index(p: int, M: int) -> None:
    if not 0 <= p < M:
        raise UsageError(f"--path-index {p} outside [0, {M})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randomhorizon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="key = value config file")
        p.add_argument("--out", default="./out", help="output directory (default ./out)")
        p.add_argument("--threads", type=int, default=1, help="worker threads, 0 = auto; never changes results")
        p.add_argument("--driver-variant", choices=("alpha", "half"), help="override the config's driver variant")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("solve", help="solve one truncation level, dump one path")
    common(p)
    p.add_argument("--n", type=int, help="truncation level (default: config truncation_n)")
    p.add_argument("--path-index", type=int, default=0)
    p.add_argument("--dump-paths", action="store_true", help="also write paths.csv for the dumped path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="value function and indifference price over truncation levels")
    common(p)
    p.add_argument("--levels", default=DEFAULT_LEVELS, help=f"comma-separated levels (default {DEFAULT_LEVELS})")
    p.add_argument("--wealth", type=float, default=1.0, help="initial wealth x (default 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("strategy", help="optimal strategy and wealth along one path")
    common(p)
    p.add_argument("--n", type=int, help="truncation level (default: config truncation_n)")
    p.add_argument("--path-index", type=int, default=0)
    p.add_argument("--tau-seed", type=int, help="draw the default clock from this seed instead of the path's own")
    p.add_argument("--wealth", type=float, default=1.0)
    p.add_argument("--dump-paths", action="store_true")
    p.set_defaults(func=cmd_strategy)

    p = sub.add_parser("selftest", help="compare the solver with the reference solutions")
    common(p, config_required=False)
    p.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply every tolerance")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConvergenceError as exc:
        # the message carries the per-iteration residual trace
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (UsageError, ConfigError, ResourceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
