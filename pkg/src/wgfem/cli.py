"""Command-line drivers: single solves, convergence tables and two-grid comparisons.

Usage::

    wg solve --problem ex1 --mesh rect:16 --degree 1 --out sol.json
    wg convergence --problem ex1 --degree 1 --grids 4,8,16,32,64 --out table.csv
    wg twogrid --problem ex2 --degree 1 --fine 4,16,36,64 --out cmp.csv

``--problem`` is a built-in name (ex1, ex2) or a JSON config file.  Meshes
are ``rect:N``, ``pquad:N:delta:seed`` or a JSON mesh file.

Exit status: 0 success, 2 usage error, 3 solver failure, 4 validation failure.
"""

from __future__ import annotations

import argparse
import io
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .analysis import ErrorRecord, energy_error, fit_rate, h1_like_error, l2_error
from .expr import ExprError
from .mesh import MeshError, build_perturbed_quad, build_rectangular, import_mesh
from .poly import QuadratureError
from .problems import ProblemError, load_problem, validate_problem
from .system import LinearSolverError, NewtonConfig, NewtonError, newton_solve, solution_to_json
from .twogrid import LocateError, sqrt_pairing, two_grid_solve
from .wgcore import DEFAULT_STAB_SIZE, CoefficientError, ElementOperators

logger = logging.getLogger("wgfem")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_VALIDATION = 4

CONVERGENCE_HEADER = ("mesh", "n", "h", "err_h1", "err_l2", "rate_placeholder",
                      "newton_iters", "seconds", "err_energy")
TWOGRID_HEADER = ("fine", "coarse", "h", "H",
                  "err_wg_h1", "err_wg_l2", "err_wg_energy", "seconds_wg",
                  "err_tg_h1", "err_tg_l2", "err_tg_energy", "seconds_tg",
                  "ratio_h1", "ratio_energy")

SOLVER_ERRORS = (NewtonError, LinearSolverError, CoefficientError, LocateError,
                 QuadratureError, FloatingPointError)


class UsageError(Exception):
    pass


# -- argument helpers -----------------------------------------------------------------

def parse_int_list(text):
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise UsageError(f"grid sizes must be positive integers, got {text!r}")
    return values


def parse_mesh_spec(spec):
    """Build a mesh from ``rect:N``, ``pquad:N:delta:seed`` or a file path.

    Returns ``(mesh, label, n)`` where ``n`` is the grid count (None for files).
    """
    parts = spec.split(":")
    try:
        if parts[0] == "rect" and len(parts) == 2:
            n = int(parts[1])
            return build_rectangular(n), f"rect:{n}", n
        if parts[0] == "pquad" and len(parts) == 4:
            n, delta, seed = int(parts[1]), float(parts[2]), int(parts[3])
            return build_perturbed_quad(n, delta, seed), f"pquad:{n}:{delta:g}:{seed}", n
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise UsageError(f"bad mesh spec {spec!r}: {exc}") from None
    if parts[0] in ("rect", "pquad"):
        raise UsageError(f"bad mesh spec {spec!r}; expected rect:N or pquad:N:delta:seed")
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"mesh file {spec!r} not found")
    mesh = import_mesh(path.read_text(encoding="utf-8"))
    return mesh, path.name, None


def _check_delta(args):
    if args.grid_type == "pquad" and not 0.0 <= args.delta < 0.5:
        raise UsageError(f"--delta must lie in [0, 0.5), got {args.delta}")


def grid_mesh(grid_type, n, delta, seed):
    if grid_type == "rect":
        return build_rectangular(n), f"rect:{n}"
    return build_perturbed_quad(n, delta, seed), f"pquad:{n}:{delta:g}:{seed}"


def report_h(mesh):
    """Mesh size used in tables: 1/N on uniform grids, max h_K otherwise."""
    if mesh.structured_n is not None:
        return 1.0 / mesh.structured_n
    return mesh.h


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "%.6e" % x


def _row(values):
    return ",".join(_fmt(v) for v in values) + "\n"


def _write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_validated_problem(spec, skip_validation=False):
    problem = load_problem(spec)
    if not skip_validation:
        validate_problem(problem)
    return problem


def _newton_config(args):
    return NewtonConfig(tolerance=args.tol, max_iterations=args.max_iter)


def _errors(problem, u, mesh, ops):
    if not problem.has_exact:
        return None, None, None
    return (h1_like_error(problem.u_exact, problem.grad_u_exact, u, mesh, ops.stab_size),
            l2_error(problem.u_exact, u, mesh),
            energy_error(problem.u_exact, u, ops))


# -- subcommands ----------------------------------------------------------------------

def run_solve(args):
    problem = _load_validated_problem(args.problem, args.skip_validation)
    mesh, label, _ = parse_mesh_spec(args.mesh)
    ops = ElementOperators(mesh, args.degree, stab_size=args.stab_size)
    u, report = newton_solve(problem, mesh, args.degree, _newton_config(args), ops=ops)
    summary = {
        "problem": problem.name,
        "mesh": label,
        "degree": args.degree,
        "cells": mesh.n_cells,
        "dofs": ops.dofmap.total,
        "h": report_h(mesh),
        **report.as_dict(),
    }
    e_h1, e_l2, e_en = _errors(problem, u, mesh, ops)
    if e_h1 is not None:
        summary.update(err_h1=e_h1, err_l2=e_l2, err_energy=e_en)
    if args.out:
        Path(args.out).write_text(solution_to_json(u, mesh, extra=summary), encoding="utf-8")
    lines = [f"{label}: {report.iterations} Newton iterations, "
             f"last increment {report.increments[-1]:.3e}"]
    if e_h1 is not None:
        lines.append(f"  err_h1 {e_h1:.6e}  err_l2 {e_l2:.6e}  err_energy {e_en:.6e}")
    for w in report.warnings:
        lines.append(f"  warning: {w}")
    print("\n".join(lines))
    return EXIT_OK


def run_convergence(args):
    problem = _load_validated_problem(args.problem, args.skip_validation)
    if not problem.has_exact:
        raise ProblemError("convergence runs need u_exact and grad_u_exact")
    grids = parse_int_list(args.grids)
    _check_delta(args)
    config = _newton_config(args)
    out = io.StringIO()
    out.write(",".join(CONVERGENCE_HEADER) + "\n")
    records = []
    status = EXIT_OK
    for n in grids:
        mesh, label = grid_mesh(args.grid_type, n, args.delta, args.seed)
        t0 = time.perf_counter()
        try:
            ops = ElementOperators(mesh, args.degree, stab_size=args.stab_size)
            u, report = newton_solve(problem, mesh, args.degree, config, ops=ops)
        except SOLVER_ERRORS as exc:
            logger.error("level %s failed: %s", label, exc)
            out.write(_row([f"FAILED:{label}", n] + [None] * 7))
            status = EXIT_SOLVER
            break
        seconds = time.perf_counter() - t0
        e_h1, e_l2, e_en = _errors(problem, u, mesh, ops)
        rec = ErrorRecord(mesh=label, n=n, h=report_h(mesh), err_h1=e_h1, err_l2=e_l2,
                          err_energy=e_en, newton_iters=report.iterations,
                          seconds=None if args.no_timings else seconds)
        records.append(rec)
        out.write(_row([rec.mesh, rec.n, rec.h, rec.err_h1, rec.err_l2, None,
                        rec.newton_iters, rec.seconds, rec.err_energy]))
        logger.info("%s: err_h1 %.3e err_l2 %.3e (%d its)", label, e_h1, e_l2, report.iterations)
    if status == EXIT_OK and len(records) >= 2:
        hs = [r.h for r in records]
        out.write(_row(["fit", None, None,
                        fit_rate(hs, [r.err_h1 for r in records]),
                        fit_rate(hs, [r.err_l2 for r in records]),
                        None, None, None,
                        fit_rate(hs, [r.err_energy for r in records])]))
    _write_text(args.out, out.getvalue())
    return status


def parse_pairing(text, fine):
    if text == "sqrt":
        return [sqrt_pairing(n) for n in fine]
    if text.startswith("explicit:"):
        coarse = parse_int_list(text[len("explicit:"):])
        if len(coarse) != len(fine):
            raise UsageError(f"explicit pairing lists {len(coarse)} coarse grids "
                             f"for {len(fine)} fine grids")
        return coarse
    raise UsageError(f"pairing must be 'sqrt' or 'explicit:<list>', got {text!r}")


def run_twogrid(args):
    problem = _load_validated_problem(args.problem, args.skip_validation)
    if not problem.has_exact:
        raise ProblemError("two-grid comparisons need u_exact and grad_u_exact")
    fine = parse_int_list(args.fine)
    coarse = parse_pairing(args.pairing, fine)
    _check_delta(args)
    for nf, nc in zip(fine, coarse):
        if nc > nf:
            raise UsageError(f"coarse grid {nc} is finer than fine grid {nf}")
    config = _newton_config(args)
    out = io.StringIO()
    out.write(",".join(TWOGRID_HEADER) + "\n")
    rows = []
    status = EXIT_OK
    for nf, nc in zip(fine, coarse):
        mesh_f, label_f = grid_mesh(args.grid_type, nf, args.delta, args.seed)
        mesh_c, label_c = grid_mesh(args.grid_type, nc, args.delta, args.seed)
        try:
            t0 = time.perf_counter()
            ops = ElementOperators(mesh_f, args.degree, stab_size=args.stab_size)
            u_wg, _ = newton_solve(problem, mesh_f, args.degree, config, ops=ops)
            t_wg = time.perf_counter() - t0
            t0 = time.perf_counter()
            u_tg, _ = two_grid_solve(problem, mesh_c, mesh_f, args.degree, config,
                                     stab_size=args.stab_size)
            t_tg = time.perf_counter() - t0
        except SOLVER_ERRORS as exc:
            logger.error("level %s / %s failed: %s", label_f, label_c, exc)
            out.write(_row([f"FAILED:{label_f}", nc] + [None] * 12))
            status = EXIT_SOLVER
            break
        wg = _errors(problem, u_wg, mesh_f, ops)
        tg = _errors(problem, u_tg, mesh_f, ops)
        row = dict(h=report_h(mesh_f), wg=wg, tg=tg)
        rows.append(row)
        if args.no_timings:
            t_wg = t_tg = None
        out.write(_row([nf, nc, row["h"], report_h(mesh_c), *wg, t_wg, *tg, t_tg,
                        tg[0] / wg[0], tg[2] / wg[2]]))
    if status == EXIT_OK and len(rows) >= 2:
        hs = [r["h"] for r in rows]
        rate = [fit_rate(hs, [r[m][i] for r in rows]) for m in ("wg", "tg") for i in range(3)]
        out.write(_row(["fit", None, None, None, *rate[:3], None, *rate[3:], None,
                        None, None]))
    _write_text(args.out, out.getvalue())
    return status


# -- entry point ------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--problem", required=True, help="ex1, ex2 or a JSON problem file")
    p.add_argument("--degree", "-k", type=int, default=1, help="polynomial degree k >= 1")
    p.add_argument("--stab-size", choices=("area", "diameter"), default=DEFAULT_STAB_SIZE,
                   help="cell size h_K in the stabiliser: sqrt(|K|) or diam(K)")
    p.add_argument("--tol", type=float, default=1e-12, help="Newton increment tolerance")
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--skip-validation", action="store_true",
                   help="do not sample-check the problem coefficients")


def _add_grids(p):
    p.add_argument("--grid-type", choices=("rect", "pquad"), default="rect")
    p.add_argument("--delta", type=float, default=0.2, help="pquad perturbation size")
    p.add_argument("--seed", type=int, default=1, help="pquad seed")
    p.add_argument("--no-timings", action="store_true",
                   help="leave timing columns empty (byte-stable output)")
    p.add_argument("--out", "-o", default=None, help="CSV path (default: stdout)")


def build_parser():
    parser = _Parser(prog="wg", description="Weak Galerkin solver for -div(a(u) grad u) = f.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one problem on one mesh")
    _add_common(p)
    p.add_argument("--mesh", required=True, help="rect:N, pquad:N:delta:seed or a mesh file")
    p.add_argument("--out", "-o", default=None, help="write the solution JSON here")
    p.set_defaults(func=run_solve)

    p = sub.add_parser("convergence", help="error table over a sequence of grids")
    _add_common(p)
    p.add_argument("--grids", default="4,8,16,32,64")
    _add_grids(p)
    p.set_defaults(func=run_convergence)

    p = sub.add_parser("twogrid", help="compare direct and two-grid solves")
    _add_common(p)
    p.add_argument("--fine", default="4,16,36,64,100")
    p.add_argument("--pairing", default="sqrt", help="'sqrt' or 'explicit:<coarse list>'")
    _add_grids(p)
    p.set_defaults(func=run_twogrid)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.degree < 1:
        print("wg: error: --degree must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"wg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProblemError, MeshError, ExprError) as exc:
        print(f"wg: validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SOLVER_ERRORS as exc:
        print(f"wg: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
