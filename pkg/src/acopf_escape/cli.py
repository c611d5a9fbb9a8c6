"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 file not found or unreadable,
4 malformed input (case, start or config file), 5 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import caseio, globalcheck, iterate, twobus
from .acopf import assemble_primal, start_to_point
from .ipm import SolverOptions, solve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_PARSE = 4
EXIT_SOLVER = 5

EPILOG = (
    "exit codes: 0 success, 2 usage error, 3 file not found, "
    "4 malformed case/start/config file, 5 solver failure"
)

# config keys and how to read them; names mirror the long flags
_CONFIG_TYPES = {
    "case": str,
    "start": str,
    "tol": float,
    "max_iterations": int,
    "max_outer": int,
    "margin": float,
    "n_starts": int,
    "seed": int,
    "jobs": int,
    "angle_range": lambda s: [float(t) for t in s.replace(",", " ").split()],
    "global_tolerance": float,
    "paper_model": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
    "out": str,
    "csv": str,
    "g": float,
    "b": float,
    "l": float,
    "rho": float,
    "mu_at": str,
    "resolution": float,
}


class InputError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def load_config(path: str) -> dict:
    """Flat ``key = value`` file; keys are flag names with or without dashes."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {path}", EXIT_NOT_FOUND)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string("[run]\n" + p.read_text())
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise InputError(f"config file {path}: {exc}", EXIT_PARSE) from None
    out = {}
    for key, raw in parser["run"].items():
        name = key.strip().lstrip("-").replace("-", "_")
        if name not in _CONFIG_TYPES:
            raise InputError(f"config file {path}: unknown key {key!r}", EXIT_PARSE)
        try:
            out[name] = _CONFIG_TYPES[name](raw)
        except ValueError:
            raise InputError(f"config file {path}: bad value for {key!r}: {raw!r}", EXIT_PARSE) from None
    return out


def _add_solver_flags(p):
    p.add_argument("--case", help="MATPOWER case file or bundled name (case9, case39, twobus)")
    p.add_argument("--tol", type=float, default=1e-4, help="KKT tolerance (default 0.0001)")
    p.add_argument("--max-iterations", type=int, default=500, help="solver iteration cap")
    p.add_argument("--paper-model", action="store_true", help="force unit taps and drop shunts")
    p.add_argument("--out", help="output file (default: stdout)")


def _add_twobus_flags(p):
    p.add_argument("--g", type=float, default=1.0, help="line conductance")
    p.add_argument("--b", type=float, default=5.0, help="line susceptance")
    p.add_argument("--l", type=float, default=3.0, help="load at bus 2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acopf-escape",
        description="Escape local ACOPF solutions with partial-Lagrangian warm restarts.",
        epilog=EPILOG,
    )
    parser.add_argument("--config", help="flat key = value file; command-line flags win")
    parser.add_argument("-v", "--verbose", action="store_true", help="solver progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = sub.choices

    p = sub.add_parser("solve", help="one ACOPF solve, solution and balance prices", epilog=EPILOG)
    _add_solver_flags(p)
    p.add_argument("--start", default="flat", help="start-point file or 'flat' (first record is used)")

    p = sub.add_parser("iterate", help="run the escape loop from one start", epilog=EPILOG)
    _add_solver_flags(p)
    p.add_argument("--start", default="flat", help="start-point file or 'flat' (first record is used)")
    p.add_argument("--max-outer", type=int, default=10, help="outer iteration cap")
    p.add_argument("--margin", type=float, default=1e-8, help="required objective decrease")

    p = sub.add_parser("multistart", help="seeded multi-start ensemble", epilog=EPILOG)
    _add_solver_flags(p)
    p.add_argument("--n-starts", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--max-outer", type=int, default=10)
    p.add_argument("--margin", type=float, default=1e-8)
    p.add_argument("--angle-range", type=float, nargs=2, metavar=("LO", "HI"), default=[-math.pi, math.pi])
    p.add_argument("--global-tolerance", type=float, default=1e-4, help="relative gap to the best objective")
    p.add_argument("--csv", help="prefix for the per-run and cluster CSV files")

    p = sub.add_parser("landscape", help="two-bus L_rho / L_mu samples as CSV", epilog=EPILOG)
    _add_twobus_flags(p)
    p.add_argument("--rho", type=float, default=100.0, help="penalty weight")
    p.add_argument("--mu-at", default="worse-root",
                   help="multiplier source: worse-root, better-root or a number")
    p.add_argument("--resolution", type=float, default=1e-3)
    p.add_argument("--out")

    p = sub.add_parser("certify-twobus", help="exhaustive grid search over the two-bus angle", epilog=EPILOG)
    _add_twobus_flags(p)
    p.add_argument("--resolution", type=float, default=1e-6)
    p.add_argument("--out")
    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _read_case(args):
    if not args.case:
        raise InputError("--case is required", EXIT_USAGE)
    try:
        case = caseio.load_case(args.case)
    except FileNotFoundError as exc:
        raise InputError(str(exc), EXIT_NOT_FOUND) from None
    except caseio.CaseFormatError as exc:
        raise InputError(f"{args.case}: {exc}", EXIT_PARSE) from None
    return case


def _read_start(args, case):
    if args.start == "flat":
        return caseio.flat_start(case)
    p = Path(args.start)
    if not p.is_file():
        raise InputError(f"start file not found: {args.start}", EXIT_NOT_FOUND)
    try:
        starts = caseio.load_start_points(p.read_text(), case)
    except caseio.StartPointError as exc:
        raise InputError(f"{args.start}: {exc}", EXIT_PARSE) from None
    if not starts:
        raise InputError(f"{args.start}: no start records", EXIT_PARSE)
    return starts[0]


def _solver(args) -> SolverOptions:
    return SolverOptions(tolerance=args.tol, max_iterations=args.max_iterations)


def _cmd_solve(args) -> int:
    case = _read_case(args)
    start = _read_start(args, case)
    problem = assemble_primal(case, paper_model=args.paper_model)
    sol = solve(problem, start_to_point(case, start), _solver(args))
    _emit(caseio.write_solution(sol, case), args.out)
    if not sol.converged:
        print(f"solver stopped: {sol.status} (KKT residual {sol.kkt_residual!r})", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_iterate(args) -> int:
    case = _read_case(args)
    start = _read_start(args, case)
    opts = iterate.IterateOptions(max_outer=args.max_outer, margin=args.margin, paper_model=args.paper_model)
    report = iterate.run(case, start, args.max_outer, _solver(args), opts)
    _emit(iterate.write_report(report, case), args.out)
    if report.stop_reason == iterate.PRIMAL_FAILED:
        print("first ACOPF solve did not converge", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_multistart(args) -> int:
    case = _read_case(args)
    opts = iterate.IterateOptions(max_outer=args.max_outer, margin=args.margin, paper_model=args.paper_model)
    report = globalcheck.multistart(
        case,
        args.n_starts,
        args.seed,
        max_outer=args.max_outer,
        solver=_solver(args),
        options=opts,
        angle_range=tuple(args.angle_range),
        global_tolerance=args.global_tolerance,
        jobs=args.jobs,
    )
    _emit(globalcheck.write_ensemble(report), args.out)
    prefix = args.csv or (str(Path(args.out).with_suffix("")) if args.out else None)
    if prefix:
        Path(prefix + ".runs.csv").write_text(globalcheck.ensemble_csv(report))
        Path(prefix + ".clusters.csv").write_text(globalcheck.cluster_csv(report))
    if report.n_converged == 0:
        print("no start converged", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_landscape(args) -> int:
    params = twobus.TwoBusParams(g=args.g, b=args.b, l=args.l, rho=args.rho)
    if args.mu_at in ("worse-root", "better-root"):
        cert = globalcheck.grid_certify_twobus(args.g, args.b, args.l)
        if not cert.feasible:
            raise InputError(f"load l={args.l!r} has no feasible angle", EXIT_USAGE)
        pick = max if args.mu_at == "worse-root" else min
        k = pick(range(len(cert.roots)), key=lambda i: cert.objectives[i])
        mu = twobus.dual_at_root(cert.roots[k], params)
    else:
        try:
            mu = float(args.mu_at)
        except ValueError:
            raise InputError(f"--mu-at expects worse-root, better-root or a number, got {args.mu_at!r}",
                             EXIT_USAGE) from None
    _emit(twobus.landscape_csv(params.with_mu(mu), args.resolution), args.out)
    return EXIT_OK


def _cmd_certify(args) -> int:
    cert = globalcheck.grid_certify_twobus(args.g, args.b, args.l, args.resolution)
    doc = {
        "g": args.g,
        "b": args.b,
        "l": args.l,
        "feasible": cert.feasible,
        "roots": list(cert.roots),
        "objectives": list(cert.objectives),
        "theta_star": cert.theta_star if cert.feasible else None,
        "objective": cert.objective if cert.feasible else None,
    }
    _emit(json.dumps(doc, indent=1), args.out)
    return EXIT_OK


_COMMANDS = {
    "solve": _cmd_solve,
    "iterate": _cmd_iterate,
    "multistart": _cmd_multistart,
    "landscape": _cmd_landscape,
    "certify-twobus": _cmd_certify,
}


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.config:
            # flags win: re-parse with the config values as defaults
            config = load_config(args.config)
            sub = parser.commands[args.command]
            known = set(vars(sub.parse_known_args([])[0]))
            sub.set_defaults(**{k: v for k, v in config.items() if k in known})
            args = parser.parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.DEBUG, format="%(message)s", stream=sys.stderr)
        return _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        # option values the library rejects (non-positive tolerance and the like)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    try:
        code = run_command()
        sys.stdout.flush()
    except BrokenPipeError:
        # reader went away (e.g. piped into head); not an error of ours
        sys.stdout = open(os.devnull, "w")
        code = EXIT_OK
    sys.exit(code)


if __name__ == "__main__":
    main()
