"""Two-grid WG: nonlinear solve on a coarse mesh, one linear solve on a fine one.

Step 1 runs Newton's method on the coarse mesh T_H.  Step 2 freezes the
diffusion coefficient at a(u_{H,0}) and solves the linear WG problem on the
fine mesh T_h.  The coarse interior polynomial is evaluated exactly at every
fine quadrature point after locating the coarse cell that contains it, so no
nesting between the two meshes is assumed.
"""

from __future__ import annotations

import logging
import math
import time

import numpy as np

from .poly import scaled_monomials
from .system import (
    NewtonConfig,
    SolveReport,
    apply_dirichlet,
    assemble_frozen,
    newton_solve,
    solve_linear,
)
from .wgcore import DEFAULT_STAB_SIZE, DofMap, ElementOperators, WGFunction

logger = logging.getLogger(__name__)

__all__ = [
    "LocateError",
    "PointLocator",
    "GridPair",
    "locate_point",
    "coarse_eval",
    "two_grid_solve",
    "sqrt_pairing",
]

#: Distance within which a point counts as lying on a cell's boundary.
LOCATE_TOL = 1e-12

# Target average number of cells overlapping one background bin.
_BIN_LOAD = 4.0


class LocateError(ValueError):
    """A point lies outside every cell of the mesh."""


def _structured_locate(n, pts, tol):
    # ceil(s*n) - 1 sends a point on a grid line to the lower-index cell,
    # which is the documented tie-break; clamping handles the outer boundary.
    s = pts * n
    idx = np.ceil(s - tol * n).astype(np.int64) - 1
    idx = np.clip(idx, 0, n - 1)
    return idx[:, 1] * n + idx[:, 0]


class PointLocator:
    """Point-to-cell lookup for one mesh.

    Uniform square grids (``mesh.structured_n`` set) use index arithmetic.
    Other meshes use uniform background bins over the bounding box, each
    listing the cells whose bounding boxes overlap it; candidates are tested
    in increasing cell index so the lowest-index containing cell wins.
    """

    def __init__(self, mesh, tol=LOCATE_TOL):
        self.mesh = mesh
        self.tol = float(tol)
        lo, hi = mesh.bounding_box()
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.structured = mesh.structured_n is not None
        if not self.structured:
            self._build_bins()

    def _build_bins(self):
        mesh = self.mesh
        nc = mesh.n_cells
        maxv = max(len(c) for c in mesh.cells)
        V = np.empty((nc, maxv, 2))
        for ci, c in enumerate(mesh.cells):
            xy = mesh.vertices[c]
            V[ci, :len(c)] = xy
            V[ci, len(c):] = xy[-1]     # repeated vertex = zero-length edge
        self._V = V
        cmin = V.min(axis=1)
        cmax = V.max(axis=1)
        span = np.maximum(self.hi - self.lo, np.finfo(float).tiny)

        nb = max(1, int(math.ceil(math.sqrt(nc / _BIN_LOAD))))
        while True:
            size = span / nb
            b0 = np.clip(np.floor((cmin - self.lo - self.tol) / size).astype(np.int64), 0, nb - 1)
            b1 = np.clip(np.floor((cmax - self.lo + self.tol) / size).astype(np.int64), 0, nb - 1)
            counts = (b1[:, 0] - b0[:, 0] + 1) * (b1[:, 1] - b0[:, 1] + 1)
            if counts.sum() / nb ** 2 <= _BIN_LOAD or nb >= 4096:
                break
            nb *= 2
        self.nb = nb
        self.bin_size = size
        lists = [[] for _ in range(nb * nb)]
        for ci in range(nc):       # ascending cell index -> sorted bin lists
            for by in range(b0[ci, 1], b1[ci, 1] + 1):
                for bx in range(b0[ci, 0], b1[ci, 0] + 1):
                    lists[by * nb + bx].append(ci)
        width = max(1, max(len(x) for x in lists))
        table = np.full((nb * nb, width), -1, dtype=np.int64)
        for b, x in enumerate(lists):
            table[b, :len(x)] = x
        self.table = table

    def _inside(self, pts, cand):
        """Closed point-in-polygon test for each (point, candidate) pair."""
        V = self._V[np.maximum(cand, 0)]                 # (P, C, m, 2)
        A = V
        B = np.roll(V, -1, axis=2)
        p = pts[:, None, None, :]
        ax, ay = A[..., 0], A[..., 1]
        bx, by = B[..., 0], B[..., 1]
        px, py = p[..., 0], p[..., 1]
        straddle = (ay > py) != (by > py)
        dy = np.where(straddle, by - ay, 1.0)
        xint = ax + (py - ay) * (bx - ax) / dy
        crossings = np.count_nonzero(straddle & (px < xint), axis=-1)
        # distance to each edge segment, for the boundary tolerance
        d = B - A
        dd = np.einsum("...c,...c->...", d, d)
        t = np.einsum("...c,...c->...", p - A, d) / np.where(dd > 0, dd, 1.0)
        t = np.clip(t, 0.0, 1.0)
        near = np.linalg.norm(A + t[..., None] * d - p, axis=-1) <= self.tol
        return ((crossings % 2 == 1) | near.any(axis=-1)) & (cand >= 0)

    def locate(self, points, chunk=20000):
        """Cell index of each point; raises :class:`LocateError` if any is outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != 2:
            raise ValueError("points must have shape (..., 2)")
        flat = pts.reshape(-1, 2)
        outside = np.any((flat < self.lo - self.tol) | (flat > self.hi + self.tol), axis=1)
        if outside.any():
            bad = flat[np.flatnonzero(outside)[0]]
            raise LocateError(f"point ({bad[0]:.17g}, {bad[1]:.17g}) is outside the mesh")
        if self.structured:
            n = self.mesh.structured_n
            return _structured_locate(n, flat, self.tol).reshape(pts.shape[:-1])

        out = np.empty(len(flat), dtype=np.int64)
        nb = self.nb
        for s in range(0, len(flat), chunk):
            P = flat[s:s + chunk]
            b = np.clip(np.floor((P - self.lo) / self.bin_size).astype(np.int64), 0, nb - 1)
            cand = self.table[b[:, 1] * nb + b[:, 0]]
            hit = self._inside(P, cand)
            found = hit.any(axis=1)
            if not found.all():
                # A point within tol of a bin border may belong to a cell
                # listed only in the neighbouring bin; retry against all cells.
                for i in np.flatnonzero(~found):
                    out[s + i] = self._locate_slow(P[i])
            first = np.argmax(hit, axis=1)
            idx = cand[np.arange(len(P)), first]
            out[s:s + len(P)][found] = idx[found]
        return out.reshape(pts.shape[:-1])

    def _locate_slow(self, p):
        allc = np.arange(self.mesh.n_cells)[None, :]
        hit = self._inside(p[None, :], allc)[0]
        if not hit.any():
            raise LocateError(f"point ({p[0]:.17g}, {p[1]:.17g}) is not inside any cell")
        return int(np.argmax(hit))


def locate_point(mesh, points, locator=None):
    """Index of the (lowest-index) cell containing each point.

    A single point ``(x, y)`` returns an ``int``; an ``(..., 2)`` array
    returns an integer array of the leading shape.
    """
    locator = locator or PointLocator(mesh)
    pts = np.asarray(points, dtype=float)
    cells = locator.locate(pts)
    if pts.ndim == 1:
        return int(cells[0])
    return cells


def coarse_eval(u_H, points, mesh=None, locator=None):
    """Value of the interior polynomial u_{H,0} at each point.

    Edge components are never used.  ``mesh`` defaults to the locator's
    mesh; one of the two must be supplied.
    """
    if locator is None:
        if mesh is None:
            raise ValueError("coarse_eval needs the coarse mesh or a locator")
        locator = PointLocator(mesh)
    mesh = locator.mesh
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 2)
    cells = locator.locate(flat)
    k = u_H.dofmap.k
    phi = scaled_monomials(flat, mesh.centroid[cells], mesh.diameter[cells], k)
    vals = np.einsum("pi,pi->p", phi, u_H.interior[cells])
    if pts.ndim == 1:
        return float(vals[0])
    return vals.reshape(pts.shape[:-1])


class GridPair:
    """A coarse mesh T_H and a fine mesh T_h over the same domain.

    Requires H >= h (H, h the largest cell diameters).  Equal sizes are
    accepted, with a warning, so that one mesh can serve as both levels.
    """

    def __init__(self, coarse, fine, k, tol=1e-12):
        self.coarse = coarse
        self.fine = fine
        self.k = int(k)
        if coarse.h < fine.h * (1 - 1e-12):
            raise ValueError(f"coarse mesh size H={coarse.h:.6g} is smaller than "
                             f"fine mesh size h={fine.h:.6g}")
        if coarse.h <= fine.h * (1 + 1e-12):
            logger.warning("coarse and fine meshes have the same size H = h = %.6g", fine.h)
        (clo, chi), (flo, fhi) = coarse.bounding_box(), fine.bounding_box()
        if not (np.allclose(clo, flo, atol=tol) and np.allclose(chi, fhi, atol=tol)
                and abs(coarse.area.sum() - fine.area.sum()) <= 1e-10):
            raise ValueError("coarse and fine meshes do not cover the same domain")
        self.coarse_dofmap = DofMap(coarse, self.k)
        self.fine_dofmap = DofMap(fine, self.k)
        self.locator = PointLocator(coarse)

    @property
    def H(self):
        return self.coarse.h

    @property
    def h(self):
        return self.fine.h


def sqrt_pairing(n_fine):
    """Coarse grid count for H = h^{1/2} on N x N grids: round(sqrt(N))."""
    nc = int(round(math.sqrt(n_fine)))
    if nc < 1:
        raise ValueError("fine grid count must be positive")
    return nc


def two_grid_solve(problem, coarse, fine, k, config=None, stab_size=DEFAULT_STAB_SIZE):
    """Run both steps of the two-grid method.

    Returns ``(u_h, report)``.  ``report.timings`` holds ``coarse``, ``fine``
    and ``total`` wall-clock seconds plus the fine-level breakdown; the
    Newton history of Step 1 is kept in ``increments``/``iterations``.
    """
    config = config or NewtonConfig()
    t_start = time.perf_counter()
    pair = GridPair(coarse, fine, k)

    # Step 1: nonlinear problem on T_H
    t0 = time.perf_counter()
    coarse_ops = ElementOperators(coarse, k, pair.coarse_dofmap, stab_size=stab_size)
    u_H, coarse_report = newton_solve(problem, coarse, k, config, ops=coarse_ops)
    t_coarse = time.perf_counter() - t0

    # Step 2: linear problem on T_h with a(u_{H,0}) frozen
    report = SolveReport()
    t0 = time.perf_counter()
    fine_ops = ElementOperators(fine, k, pair.fine_dofmap, stab_size=stab_size)
    t1 = time.perf_counter()

    def w0(x, y):
        return coarse_eval(u_H, np.stack([x, y], axis=-1), locator=pair.locator)

    system = assemble_frozen(w0, problem, fine, fine_ops)
    t2 = time.perf_counter()
    x = solve_linear(system, config.linear_tolerance, report)
    t3 = time.perf_counter()
    u_h = WGFunction.zeros(fine_ops.dofmap)
    u_h.coeffs[fine_ops.dofmap.constrained] = apply_dirichlet(problem, fine, fine_ops.dofmap)[0]
    u_h.coeffs[fine_ops.dofmap.free] = x

    report.iterations = coarse_report.iterations
    report.increments = list(coarse_report.increments)
    report.residual_norm = coarse_report.residual_norm
    report.linear_residuals = coarse_report.linear_residuals + report.linear_residuals
    report.warnings = [f"coarse: {w}" for w in coarse_report.warnings] + report.warnings
    report.converged = True
    report.timings = {
        "coarse": t_coarse,
        "fine_setup": t1 - t0,
        "fine_assembly": t2 - t1,
        "fine_linear_solve": t3 - t2,
        "fine": t3 - t0,
        "total": time.perf_counter() - t_start,
    }
    report.coarse_report = coarse_report
    return u_h, report

