"""Discrete norms, errors against exact solutions, and rate fitting."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .poly import (
    fan_quadrature,
    gauss_legendre,
    legendre_values,
    scaled_monomial_gradients,
    scaled_monomials,
)
from .wgcore import DEFAULT_STAB_SIZE, error_degree, project_Qh

__all__ = [
    "ErrorRecord",
    "energy_norm",
    "h1_like_norm",
    "h1_like_error",
    "energy_error",
    "l2_error",
    "fit_rate",
]


@dataclass
class ErrorRecord:
    """One row of a convergence table."""

    mesh: str
    n: int
    h: float
    err_h1: float
    err_l2: float
    err_energy: Optional[float] = None
    newton_iters: Optional[int] = None
    seconds: Optional[float] = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        for name in ("err_h1", "err_l2"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")

    def as_dict(self):
        return asdict(self)


def energy_norm(v, ops):
    """|||v|||^2 = sum_K ||grad_w v||_K^2 + h_K^{-1} ||v0 - vb||_{dK}^2."""
    total = 0.0
    for grp in ops.groups:
        loc = v.coeffs[grp.dofs]
        gv = np.einsum("gqcn,gn->gqc", grp.gradw, loc)
        total += np.einsum("gq,gqc,gqc->", grp.qw, gv, gv)
        total += np.einsum("gm,gmn,gn->", loc, grp.S, loc)
    return float(np.sqrt(max(total, 0.0)))


def _cell_groups(mesh):
    counts = np.array([len(c) for c in mesh.cells])
    for nv in np.unique(counts):
        cells = np.flatnonzero(counts == nv)
        V = np.stack([mesh.vertices[mesh.cells[c]] for c in cells])
        sign = np.stack([mesh.cell_edge_sign[c] for c in cells]).astype(float)
        yield cells, V, sign


def energy_error(u_exact, u_h, ops):
    """|||Q_h u - u_h||| (the discrete error in the energy norm)."""
    return energy_norm(project_Qh(u_exact, ops.mesh, ops.k, ops.dofmap) - u_h, ops)


def _broken_terms(v, mesh, u_exact=None, grad_u_exact=None, degree=None,
                  stab_size=DEFAULT_STAB_SIZE):
    """Squared per-mesh sums of ||grad(u - v0)||^2, h^{-1}||v0 - vb||^2, ||u - v0||^2.

    Missing exact data are treated as zero.
    """
    hs_all = mesh.cell_size(stab_size)
    k = v.dofmap.k
    degree = error_degree(k) if degree is None else degree
    grad_sq = jump_sq = l2_sq = 0.0
    u0_all = v.interior
    ub_all = v.edge
    t, wt = gauss_legendre(degree)
    for cells, V, sign in _cell_groups(mesh):
        cen = mesh.centroid[cells]
        h = mesh.diameter[cells]
        c0 = u0_all[cells]
        qpts, qw = fan_quadrature(V, cen, degree)
        phi = scaled_monomials(qpts, cen[:, None, :], h[:, None], k)
        dphi = scaled_monomial_gradients(qpts, cen[:, None, :], h[:, None], k)
        u0 = np.einsum("gqi,gi->gq", phi, c0)
        du0 = np.einsum("gqic,gi->gqc", dphi, c0)
        X, Y = qpts[..., 0], qpts[..., 1]
        if grad_u_exact is not None:
            gx, gy = grad_u_exact(X, Y)
            du = np.stack(np.broadcast_arrays(gx, gy), axis=-1)
        else:
            du = 0.0
        ue = u_exact(X, Y) if u_exact is not None else 0.0
        grad_sq += float(np.einsum("gq,gqc->", qw, (du - du0) ** 2))
        l2_sq += float(np.einsum("gq,gq->", qw, (ue - u0) ** 2))

        P0 = V
        d = np.roll(V, -1, axis=1) - V
        L = np.linalg.norm(d, axis=-1)
        ept = P0[:, :, None, :] + 0.5 * (t + 1.0)[None, None, :, None] * d[:, :, None, :]
        ew = 0.5 * L[:, :, None] * wt[None, None, :]
        phie = scaled_monomials(ept, cen[:, None, None, :], h[:, None, None], k)
        u0e = np.einsum("gsqi,gi->gsq", phie, c0)
        Pe = legendre_values(sign[:, :, None] * t[None, None, :], k)
        edges = np.stack([mesh.cell_edges[c] for c in cells])
        ube = np.einsum("gsql,gsl->gsq", Pe, ub_all[edges])
        jump_sq += float(np.einsum("gsq,gsq,g->", ew, (u0e - ube) ** 2, 1.0 / hs_all[cells]))
    return grad_sq, jump_sq, l2_sq


def h1_like_norm(v, mesh, stab_size=DEFAULT_STAB_SIZE):
    """||v||_{1,h} of a weak function: broken gradient of v0 plus scaled jumps."""
    g, j, _ = _broken_terms(v, mesh, stab_size=stab_size)
    return float(np.sqrt(g + j))


def h1_like_error(u_exact, grad_u_exact, u_h, mesh, stab_size=DEFAULT_STAB_SIZE):
    """||u - u_h||_{1,h}; the trace of u cancels in the jump term."""
    g, j, _ = _broken_terms(u_h, mesh, u_exact, grad_u_exact, stab_size=stab_size)
    return float(np.sqrt(g + j))


def l2_error(u_exact, u_h, mesh):
    """||u - u_0|| over the mesh."""
    _, _, l2 = _broken_terms(u_h, mesh, u_exact, None)
    return float(np.sqrt(l2))


def fit_rate(hs, errors):
    """Least-squares slope of log(error) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.shape != errors.shape or hs.ndim != 1:
        raise ValueError("h and error lists must be 1-D and of equal length")
    if len(hs) < 2:
        raise ValueError("need at least two levels to fit a rate")
    if np.any(hs <= 0) or np.any(errors <= 0):
        raise ValueError("h and errors must be positive")
    slope, _ = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope)
