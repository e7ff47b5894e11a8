"""Global assembly, boundary conditions, sparse solves and Newton's method.

The nonlinear WG scheme seeks u_h with u_b = Q_b g on the boundary and

    R(u_h)[v] = A_h(u_h; u_h, v) - (f, v0) = 0     for all v in V_h^0.

Its exact Jacobian is the linearised form D_h(u_h; ., .), which adds the
term (a_u(u0) grad_w u_h phi0, grad_w v) to A_h(u_h; ., .).  Newton's method
starts from zero (plus the boundary data) and stops once the energy norm of
the increment drops below the tolerance.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .analysis import energy_norm
from .mesh import Mesh
from .wgcore import (
    DEFAULT_STAB_SIZE,
    DofMap,
    ElementOperators,
    WGFunction,
    _edge_projection,
    cell_degree,
    local_form_A,
    local_form_D,
)

logger = logging.getLogger(__name__)

__all__ = [
    "NewtonConfig",
    "SolveReport",
    "SparseSystem",
    "NewtonError",
    "LinearSolverError",
    "apply_dirichlet",
    "assemble_residual",
    "assemble_jacobian",
    "assemble_frozen",
    "solve_linear",
    "newton_solve",
    "solution_to_json",
    "solution_from_json",
]


class LinearSolverError(RuntimeError):
    pass


class NewtonError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class NewtonConfig:
    tolerance: float = 1e-12
    max_iterations: int = 50
    linear_tolerance: float = 1e-13

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.linear_tolerance > 0:
            raise ValueError("linear_tolerance must be positive")


@dataclass
class SolveReport:
    """Diagnostics of a solve.

    ``iterations`` counts Newton updates up to the one that produced the
    converged iterate; the confirming step whose increment fell below the
    tolerance is recorded in ``increments`` but not counted.
    """

    iterations: int = 0
    increments: list = field(default_factory=list)
    residual_norm: float = float("nan")
    linear_residuals: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_solves(self):
        return len(self.increments)

    def add_time(self, phase, seconds):
        self.timings[phase] = self.timings.get(phase, 0.0) + seconds

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "increments": list(self.increments),
            "residual_norm": self.residual_norm,
            "linear_residuals": list(self.linear_residuals),
            "timings": dict(self.timings),
            "warnings": list(self.warnings),
            "converged": self.converged,
        }


def _csr_from_triplets(rows, cols, vals, shape):
    """Sum duplicates in (row, col)-sorted order; stable, hence reproducible."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    key = rows * shape[1] + cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    vals = vals[order]
    if len(key):
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
        data = np.add.reduceat(vals, starts)
        ukey = key[starts]
    else:
        data = vals
        ukey = key
    r = ukey // shape[1]
    c = ukey % shape[1]
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=shape[0]), out=indptr[1:])
    return sp.csr_matrix((data, c, indptr), shape=shape)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray

    @classmethod
    def from_triplets(cls, rows, cols, vals, n, rhs):
        return cls(_csr_from_triplets(rows, cols, vals, (n, n)), np.asarray(rhs, dtype=float))

    @property
    def n(self):
        return self.matrix.shape[0]


# -- boundary data ------------------------------------------------------------------

def apply_dirichlet(problem, mesh, dofmap):
    """Boundary edge coefficients Q_b g and the global -> free index map.

    Returns ``(values, free_index)`` where ``values[i]`` belongs to global DoF
    ``dofmap.constrained[i]`` and ``free_index`` is -1 on constrained DoFs.
    """
    be = dofmap.boundary_edges
    k = dofmap.k
    coeffs = _edge_projection(problem.g, mesh.vertices[mesh.edges[be, 0]],
                              mesh.vertices[mesh.edges[be, 1]], k, cell_degree(k))
    return coeffs.ravel(), dofmap.free_index


def _initial_state(problem, mesh, dofmap):
    u = WGFunction.zeros(dofmap)
    values, _ = apply_dirichlet(problem, mesh, dofmap)
    u.coeffs[dofmap.constrained] = values
    return u


# -- assembly -----------------------------------------------------------------------

def _load_local(grp, problem):
    """(f, v0) for every local DoF (zero on edge DoFs)."""
    fvals = np.broadcast_to(problem.f(grp.qpts[..., 0], grp.qpts[..., 1]), grp.qw.shape)
    out = np.zeros(grp.dofs.shape)
    out[:, :grp.phi.shape[-1]] = np.einsum("gq,gq,gqi->gi", grp.qw, fvals, grp.phi)
    return out


def _state(grp, u, problem):
    loc = u.coeffs[grp.dofs]
    nk = grp.phi.shape[-1]
    u0 = np.einsum("gqi,gi->gq", grp.phi, loc[:, :nk])
    gu = np.einsum("gqcn,gn->gqc", grp.gradw, loc)
    X, Y = grp.qpts[..., 0], grp.qpts[..., 1]
    return loc, u0, gu, X, Y


def _scatter_vector(ops, local_vectors):
    total = ops.dofmap.total
    out = np.zeros(total)
    for grp, vec in zip(ops.groups, local_vectors):
        out += np.bincount(grp.dofs.ravel(), weights=vec.ravel(), minlength=total)
    return out


def _scatter_matrix(ops, local_matrices):
    """Assemble local matrices restricted to free rows and columns."""
    fidx = ops.dofmap.free_index
    rows, cols, vals = [], [], []
    for grp, mats in zip(ops.groups, local_matrices):
        fd = fidx[grp.dofs]
        g, L = fd.shape
        R = np.broadcast_to(fd[:, :, None], (g, L, L))
        C = np.broadcast_to(fd[:, None, :], (g, L, L))
        keep = (R >= 0) & (C >= 0)
        rows.append(R[keep])
        cols.append(C[keep])
        vals.append(mats[keep])
    n = ops.dofmap.n_free
    return _csr_from_triplets(np.concatenate(rows), np.concatenate(cols),
                              np.concatenate(vals), (n, n))


def _residual_local(ops, u, problem):
    out = []
    for grp in ops.groups:
        loc, u0, gu, X, Y = _state(grp, u, problem)
        a = np.broadcast_to(problem.a(X, Y, u0), u0.shape)
        A = local_form_A(grp.qw, a, grp.gradw, grp.S, grp.cells, grp.qpts)
        out.append(np.einsum("gmn,gn->gm", A, loc) - _load_local(grp, problem))
    return out


def assemble_residual(u, problem, mesh, ops):
    """Free-DoF vector of A_h(u; u, v) - (f, v0)."""
    full = _scatter_vector(ops, _residual_local(ops, u, problem))
    return full[ops.dofmap.free]


def _jacobian_and_residual(ops, u, problem):
    mats, vecs = [], []
    for grp in ops.groups:
        loc, u0, gu, X, Y = _state(grp, u, problem)
        shape = u0.shape
        a = np.broadcast_to(problem.a(X, Y, u0), shape)
        au = np.broadcast_to(problem.a_u(X, Y, u0), shape)
        D = local_form_D(grp.qw, a, au, gu, grp.phi, grp.gradw, grp.S, grp.cells, grp.qpts)
        # A_h(u; u, v) = (a grad_w u, grad_w v) + s_h(u, v)
        r = (np.einsum("gq,gqc,gqcm->gm", grp.qw * a, gu, grp.gradw)
             + np.einsum("gmn,gn->gm", grp.S, loc) - _load_local(grp, problem))
        mats.append(D)
        vecs.append(r)
    J = _scatter_matrix(ops, mats)
    r = _scatter_vector(ops, vecs)[ops.dofmap.free]
    return J, r


def assemble_jacobian(u, problem, mesh, ops):
    """Matrix of D_h(u; ., .) on free DoFs (exact derivative of the residual)."""
    J, _ = _jacobian_and_residual(ops, u, problem)
    return J


def _coefficient_values(w, problem, grp):
    X, Y = grp.qpts[..., 0], grp.qpts[..., 1]
    if isinstance(w, WGFunction):
        nk = grp.phi.shape[-1]
        w0 = np.einsum("gqi,gi->gq", grp.phi, w.coeffs[grp.dofs][:, :nk])
    else:
        w0 = np.asarray(w(X, Y), dtype=float)
    return np.broadcast_to(problem.a(X, Y, w0), grp.qw.shape)


def assemble_frozen(w, problem, mesh, ops, boundary_values=None):
    """Linear system of A_h(w; u, v) = (f, v0) with u_b = Q_b g on the boundary.

    ``w`` is a :class:`WGFunction` on this mesh or a callable ``w0(x, y)``
    giving the interior value of the freezing state at arbitrary points.
    """
    dm = ops.dofmap
    if boundary_values is None:
        boundary_values, _ = apply_dirichlet(problem, mesh, dm)
    ub = np.zeros(dm.total)
    ub[dm.constrained] = boundary_values
    mats, vecs = [], []
    for grp in ops.groups:
        a = _coefficient_values(w, problem, grp)
        A = local_form_A(grp.qw, a, grp.gradw, grp.S, grp.cells, grp.qpts)
        mats.append(A)
        vecs.append(_load_local(grp, problem) - np.einsum("gmn,gn->gm", A, ub[grp.dofs]))
    matrix = _scatter_matrix(ops, mats)
    rhs = _scatter_vector(ops, vecs)[dm.free]
    return SparseSystem(matrix, rhs)


# -- linear solve ----------------------------------------------------------------------

MAX_REFINEMENT_STEPS = 3


def solve_linear(system, tol=1e-13, report=None):
    """Direct sparse LU solve with up to three steps of iterative refinement.

    If the relative residual still exceeds ``tol`` after refinement (round-off
    floor of an ill-conditioned system) the result is returned and a warning
    is recorded; a singular or non-finite factorisation raises.
    """
    A = sp.csc_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise LinearSolverError("matrix and right-hand side dimensions disagree")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        if report is not None:
            report.linear_residuals.append(0.0)
        return np.zeros_like(b)
    try:
        # A is symmetric or nearly so; a small diagonal pivot threshold keeps
        # the minimum-degree ordering intact (default pivoting destroys it).
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise LinearSolverError(f"sparse LU failed: {exc}") from None
    x = lu.solve(b)
    rel = np.linalg.norm(b - A @ x) / bnorm
    steps = 0
    while rel > tol and steps < MAX_REFINEMENT_STEPS:
        x_new = x + lu.solve(b - A @ x)
        rel_new = np.linalg.norm(b - A @ x_new) / bnorm
        steps += 1
        if not rel_new < rel:
            break
        x, rel = x_new, rel_new
    if not np.all(np.isfinite(x)):
        raise LinearSolverError("linear solve produced non-finite values (singular matrix?)")
    if report is not None:
        report.linear_residuals.append(float(rel))
        if rel > tol:
            report.warnings.append(f"linear relative residual {rel:.3e} above {tol:.1e}")
    return x


# -- Newton ------------------------------------------------------------------------

def newton_solve(problem, mesh, k, config=None, ops=None, initial=None,
                 stab_size=DEFAULT_STAB_SIZE):
    """Solve the nonlinear WG scheme by Newton's method from the zero guess.

    Returns ``(u_h, report)``.  Raises :class:`NewtonError` when the iteration
    limit is reached and propagates coefficient and linear-solver failures.
    """
    config = config or NewtonConfig()
    report = SolveReport()
    t_start = time.perf_counter()
    if ops is None:
        t0 = time.perf_counter()
        ops = ElementOperators(mesh, k, stab_size=stab_size)
        report.add_time("setup", time.perf_counter() - t0)
    dm = ops.dofmap
    u = _initial_state(problem, mesh, dm)
    if initial is not None:
        u.coeffs[dm.free] = initial.coeffs[dm.free]
    fixed = u.coeffs[dm.constrained].copy()

    for it in range(1, config.max_iterations + 1):
        t0 = time.perf_counter()
        J, r = _jacobian_and_residual(ops, u, problem)
        t1 = time.perf_counter()
        dx = solve_linear(SparseSystem(J, -r), config.linear_tolerance, report)
        t2 = time.perf_counter()
        report.add_time("assembly", t1 - t0)
        report.add_time("linear_solve", t2 - t1)
        delta = WGFunction.zeros(dm)
        delta.coeffs[dm.free] = dx
        u.coeffs[dm.free] += dx
        inc = energy_norm(delta, ops)
        report.increments.append(inc)
        logger.debug("newton %d: |||delta||| = %.3e", it, inc)
        if inc < config.tolerance:
            report.converged = True
            report.iterations = it - 1
            break
    assert np.array_equal(u.coeffs[dm.constrained], fixed)
    t0 = time.perf_counter()
    report.residual_norm = float(np.linalg.norm(assemble_residual(u, problem, mesh, ops)))
    report.add_time("assembly", time.perf_counter() - t0)
    report.add_time("total", time.perf_counter() - t_start)
    if not report.converged:
        report.iterations = config.max_iterations
        raise NewtonError(f"Newton did not converge in {config.max_iterations} iterations "
                          f"(last increment {report.increments[-1]:.3e})", report)
    return u, report


# -- solution files ------------------------------------------------------------------

SOLUTION_FORMAT = "wg-solution"
SOLUTION_VERSION = 1


def solution_to_json(u, mesh, extra=None):
    """Serialise a solution with its mesh and DoF layout."""
    doc = {
        "format": SOLUTION_FORMAT,
        "version": SOLUTION_VERSION,
        "dofmap": u.dofmap.metadata(),
        "mesh": {
            "vertices": mesh.vertices.tolist(),
            "cells": [c.tolist() for c in mesh.cells],
        },
        "coefficients": u.coeffs.tolist(),
    }
    if extra:
        doc["report"] = extra
    return json.dumps(doc)


def solution_from_json(text):
    """Inverse of :func:`solution_to_json`; returns ``(mesh, u)``."""
    doc = json.loads(text)
    if doc.get("format") != SOLUTION_FORMAT:
        raise ValueError("not a WG solution file")
    if doc.get("version") != SOLUTION_VERSION:
        raise ValueError(f"unsupported solution file version {doc.get('version')}")
    mesh = Mesh(doc["mesh"]["vertices"], doc["mesh"]["cells"])
    meta = doc["dofmap"]
    dm = DofMap(mesh, meta["k"])
    if dm.metadata() != meta:
        raise ValueError("solution file DoF layout does not match its mesh")
    return mesh, WGFunction(dm, np.array(doc["coefficients"], dtype=float))
