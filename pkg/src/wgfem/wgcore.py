"""Weak functions, the discrete weak gradient, projections and local forms.

Local DoF layout of a cell with ``n`` edges (frozen):

    [ v0 coefficients (dim P_k) | edge 0 (k+1) | edge 1 (k+1) | ... ]

with edges in the cell's CCW order.  Edge coefficients are Legendre
coefficients in the edge's canonical direction, so both neighbours of an
interior edge share one set of unknowns.

The weak gradient of v = {v0, vb} on K is the unique q in [P_{k-1}(K)]^2 with

    (q, phi)_K = -(v0, div phi)_K + <vb, phi . n>_{dK}   for all phi,

and ``G_K`` maps local DoFs to the coefficients of q (x-component block
first, then y).  The stabiliser is ``h_K^{-1} <v0 - vb, w0 - wb>_{dK}``,
where the cell size h_K defaults to sqrt(|K|) (the side length 1/N on an
N x N square grid); ``stab_size="diameter"`` switches to diam(K).

Cells are processed in groups sharing a vertex count so every per-cell
quantity is a stacked array and all local work is batched numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .poly import (
    dim_p,
    fan_quadrature,
    gauss_legendre,
    legendre_values,
    scaled_monomial_gradients,
    scaled_monomials,
)

__all__ = [
    "CoefficientError",
    "DofMap",
    "WGFunction",
    "CellGroup",
    "ElementOperators",
    "cell_degree",
    "edge_degree",
    "error_degree",
    "DEFAULT_STAB_SIZE",
    "weak_gradient_matrix",
    "stabilizer_matrix",
    "project_Q0",
    "project_Qb",
    "project_Qh",
    "project_Pih",
    "local_form_A",
    "local_form_D",
]


def cell_degree(k):
    """Cell quadrature degree for assembly (a(u0) is not polynomial)."""
    return 2 * k + 4


def edge_degree(k):
    return 2 * k + 2


def error_degree(k):
    """Quadrature degree for error norms."""
    return 2 * k + 6


#: Cell length scale in the stabiliser and the h^{-1} terms of the norms.
DEFAULT_STAB_SIZE = "area"


class CoefficientError(ArithmeticError):
    """The diffusion coefficient was non-positive at a quadrature point."""

    def __init__(self, message, cell=None, point=None):
        super().__init__(message)
        self.cell = cell
        self.point = point


class DofMap:
    """Global numbering: all cell blocks (cell order), then all edge blocks."""

    def __init__(self, mesh, k):
        k = int(k)
        if k < 1:
            raise ValueError("polynomial degree k must be >= 1")
        self.k = k
        self.n_cells = mesh.n_cells
        self.n_edges = mesh.n_edges
        self.cell_ndof = dim_p(k)
        self.edge_ndof = k + 1
        self.n_interior = self.n_cells * self.cell_ndof
        self.n_edge = self.n_edges * self.edge_ndof
        self.total = self.n_interior + self.n_edge
        self.boundary_edges = np.flatnonzero(mesh.boundary)
        constrained = (self.n_interior
                       + self.boundary_edges[:, None] * self.edge_ndof
                       + np.arange(self.edge_ndof)[None, :]).ravel()
        mask = np.zeros(self.total, dtype=bool)
        mask[constrained] = True
        self.constrained = constrained
        self.constrained_mask = mask
        self.free = np.flatnonzero(~mask)
        self.n_constrained = len(constrained)
        # global index -> free index (-1 when constrained)
        self.free_index = np.full(self.total, -1, dtype=np.int64)
        self.free_index[self.free] = np.arange(len(self.free))
        self._cell_edges = mesh.cell_edges

    @property
    def n_free(self):
        return len(self.free)

    def cell_offset(self, ci):
        return ci * self.cell_ndof

    def edge_offset(self, e):
        return self.n_interior + e * self.edge_ndof

    def cell_dofs(self, ci):
        return np.arange(self.cell_ndof) + ci * self.cell_ndof

    def edge_dofs(self, e):
        return np.arange(self.edge_ndof) + self.edge_offset(e)

    def local_dofs(self, ci):
        """Global indices of a cell's local DoF vector."""
        parts = [self.cell_dofs(ci)]
        parts += [self.edge_dofs(e) for e in self._cell_edges[ci]]
        return np.concatenate(parts)

    def metadata(self):
        return {
            "k": self.k,
            "n_cells": self.n_cells,
            "n_edges": self.n_edges,
            "n_interior": self.n_interior,
            "n_edge": self.n_edge,
            "n_constrained": self.n_constrained,
            "total": self.total,
            "ordering": "cells-glex/edges-legendre/v1",
        }


@dataclass
class WGFunction:
    """Coefficient vector of a weak function {v0, vb}."""

    dofmap: DofMap
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.dofmap.total,):
            raise ValueError(f"expected {self.dofmap.total} coefficients, "
                             f"got {self.coeffs.shape}")

    @classmethod
    def zeros(cls, dofmap):
        return cls(dofmap, np.zeros(dofmap.total))

    def copy(self):
        return WGFunction(self.dofmap, self.coeffs.copy())

    @property
    def interior(self):
        """(n_cells, dim P_k) view of the cell coefficients."""
        d = self.dofmap
        return self.coeffs[:d.n_interior].reshape(d.n_cells, d.cell_ndof)

    @property
    def edge(self):
        """(n_edges, k+1) view of the edge coefficients."""
        d = self.dofmap
        return self.coeffs[d.n_interior:].reshape(d.n_edges, d.edge_ndof)

    def __add__(self, other):
        return WGFunction(self.dofmap, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return WGFunction(self.dofmap, self.coeffs - other.coeffs)

    def __mul__(self, alpha):
        return WGFunction(self.dofmap, alpha * self.coeffs)

    __rmul__ = __mul__


@dataclass
class CellGroup:
    """Stacked operators for all cells with the same number of edges.

    Shapes use ``g`` = cells in group, ``q`` = cell quadrature points,
    ``L`` = local DoFs, ``n1`` = dim P_{k-1}.
    """

    cells: np.ndarray        # (g,)
    nv: int
    dofs: np.ndarray         # (g, L) global DoF indices
    centroid: np.ndarray     # (g, 2)
    h: np.ndarray            # (g,) basis scale (diameter)
    hs: np.ndarray           # (g,) stabiliser size
    qpts: np.ndarray         # (g, q, 2)
    qw: np.ndarray           # (g, q)
    phi: np.ndarray          # (g, q, dim P_k) cell basis at quadrature points
    G: np.ndarray            # (g, 2*n1, L)
    gradw: np.ndarray        # (g, q, 2, L) weak gradient of each local basis function
    S: np.ndarray            # (g, L, L)


def _batch_operators(V, cen, h, hs, sign, k, cdeg, edeg):
    """G_K and S_K for a stack of cells with equal vertex count.

    V (g, nv, 2) CCW vertices, h (g,) basis scale, hs (g,) stabiliser size,
    sign (g, nv) edge orientation signs.
    """
    g, nv = V.shape[:2]
    nk, n1, ne = dim_p(k), dim_p(k - 1), k + 1
    nloc = nk + nv * ne

    qpts, qw = fan_quadrature(V, cen, cdeg)
    phi = scaled_monomials(qpts, cen[:, None, :], h[:, None], k)
    phi1 = phi[..., :n1]
    dphi1 = scaled_monomial_gradients(qpts, cen[:, None, :], h[:, None], k - 1)

    M1 = np.einsum("gq,gqi,gqj->gij", qw, phi1, phi1)
    M1 = 0.5 * (M1 + M1.transpose(0, 2, 1))
    B = np.zeros((g, 2, n1, nloc))
    for c in range(2):
        B[:, c, :, :nk] = -np.einsum("gq,gqj,gqi->gji", qw, dphi1[..., c], phi)

    t, wt = gauss_legendre(edeg)
    P0 = V
    P1 = np.roll(V, -1, axis=1)
    d = P1 - P0
    L = np.linalg.norm(d, axis=-1)
    nrm = np.stack([d[..., 1], -d[..., 0]], axis=-1) / L[..., None]
    ept = P0[:, :, None, :] + 0.5 * (t + 1.0)[None, None, :, None] * d[:, :, None, :]
    ew = 0.5 * L[:, :, None] * wt[None, None, :]
    Pe = legendre_values(sign[:, :, None] * t[None, None, :], k)  # (g, nv, qe, ne)
    phie = scaled_monomials(ept, cen[:, None, None, :], h[:, None, None], k)

    for i in range(nv):
        cols = slice(nk + i * ne, nk + (i + 1) * ne)
        mom = np.einsum("gq,gqj,gql->gjl", ew[:, i], phie[:, i, :, :n1], Pe[:, i])
        for c in range(2):
            B[:, c, :, cols] = mom * nrm[:, i, c][:, None, None]

    G = np.linalg.solve(M1[:, None], B).reshape(g, 2 * n1, nloc)
    gradw = np.einsum("gqj,gcjn->gqcn", phi1, G.reshape(g, 2, n1, nloc))

    # v0 - vb on each edge, as a row over local DoFs
    D = np.zeros((g, nv, len(t), nloc))
    D[..., :nk] = phie
    for i in range(nv):
        D[:, i, :, nk + i * ne: nk + (i + 1) * ne] = -Pe[:, i]
    Dw = D * (ew / hs[:, None, None])[..., None]
    S = np.einsum("giqm,giqn->gmn", Dw, D)
    S = 0.5 * (S + S.transpose(0, 2, 1))
    return dict(qpts=qpts, qw=qw, phi=phi, G=G, gradw=gradw, S=S)


class ElementOperators:
    """Per-cell weak-gradient and stabiliser operators for a mesh and degree k."""

    def __init__(self, mesh, k, dofmap=None, stab_size=DEFAULT_STAB_SIZE):
        self.mesh = mesh
        self.k = int(k)
        self.stab_size = stab_size
        hs_all = mesh.cell_size(stab_size)
        self.dofmap = dofmap if dofmap is not None else DofMap(mesh, k)
        self.cell_deg = cell_degree(self.k)
        self.edge_deg = edge_degree(self.k)
        counts = np.array([len(c) for c in mesh.cells])
        self.groups = []
        self.cell_group = np.empty((mesh.n_cells, 2), dtype=np.int64)
        for gi, nv in enumerate(np.unique(counts)):
            cells = np.flatnonzero(counts == nv)
            V = np.stack([mesh.vertices[mesh.cells[c]] for c in cells])
            sign = np.stack([mesh.cell_edge_sign[c] for c in cells]).astype(float)
            cen = mesh.centroid[cells]
            h = mesh.diameter[cells]
            hs = hs_all[cells]
            ops = _batch_operators(V, cen, h, hs, sign, self.k, self.cell_deg, self.edge_deg)
            dofs = np.stack([self.dofmap.local_dofs(c) for c in cells])
            self.groups.append(CellGroup(cells=cells, nv=int(nv), dofs=dofs,
                                         centroid=cen, h=h, hs=hs, **ops))
            self.cell_group[cells, 0] = gi
            self.cell_group[cells, 1] = np.arange(len(cells))

    def _locate(self, ci):
        gi, pos = self.cell_group[ci]
        return self.groups[gi], pos

    def G(self, ci):
        grp, pos = self._locate(ci)
        return grp.G[pos]

    def S(self, ci):
        grp, pos = self._locate(ci)
        return grp.S[pos]

    def local_dofs(self, ci):
        grp, pos = self._locate(ci)
        return grp.dofs[pos]

    def weak_gradient(self, v):
        """Per-cell coefficients of grad_w v, shape (n_cells, 2, dim P_{k-1})."""
        n1 = dim_p(self.k - 1)
        out = np.empty((self.mesh.n_cells, 2, n1))
        for grp in self.groups:
            loc = v.coeffs[grp.dofs]
            out[grp.cells] = np.einsum("gmn,gn->gm", grp.G, loc).reshape(-1, 2, n1)
        return out


def _single_cell(mesh, ci, k, stab_size):
    c = mesh.cells[ci]
    return _batch_operators(mesh.vertices[c][None], mesh.centroid[ci][None],
                            mesh.diameter[ci:ci + 1],
                            mesh.cell_size(stab_size)[ci:ci + 1],
                            np.asarray(mesh.cell_edge_sign[ci], dtype=float)[None],
                            k, cell_degree(k), edge_degree(k))


def weak_gradient_matrix(mesh, ci, k):
    """G_K for a single cell (see :class:`ElementOperators` for the batched form)."""
    return _single_cell(mesh, ci, k, DEFAULT_STAB_SIZE)["G"][0]


def stabilizer_matrix(mesh, ci, k, stab_size=DEFAULT_STAB_SIZE):
    return _single_cell(mesh, ci, k, stab_size)["S"][0]


# -- projections ---------------------------------------------------------------

def _cell_projection(f, V, cen, h, k, degree):
    qpts, qw = fan_quadrature(V, cen, degree)
    phi = scaled_monomials(qpts, cen[:, None, :], h[:, None], k)
    M = np.einsum("gq,gqi,gqj->gij", qw, phi, phi)
    vals = np.asarray(f(qpts[..., 0], qpts[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, qw.shape)
    rhs = np.einsum("gq,gq,gqi->gi", qw, vals, phi)
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def project_Q0(f, mesh, ci, k, degree=None):
    """L2 projection of f(x, y) onto P_k(K) in the scaled-monomial basis."""
    degree = cell_degree(k) if degree is None else degree
    c = mesh.cells[ci]
    return _cell_projection(f, mesh.vertices[c][None], mesh.centroid[ci][None],
                            mesh.diameter[ci:ci + 1], k, degree)[0]


def _edge_projection(f, P0, P1, k, degree):
    t, wt = gauss_legendre(degree)
    pts = P0[:, None, :] + 0.5 * (t + 1.0)[None, :, None] * (P1 - P0)[:, None, :]
    vals = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, pts.shape[:2])
    Pl = legendre_values(t, k)                     # (q, k+1)
    scale = (2.0 * np.arange(k + 1) + 1.0) / 2.0   # inverse of diagonal mass
    return (vals * wt[None, :]) @ Pl * scale[None, :]


def project_Qb(f, mesh, e, k, degree=None):
    """L2 projection of f(x, y) onto P_k(e), Legendre coefficients."""
    degree = cell_degree(k) if degree is None else degree
    a, b = mesh.edges[e]
    return _edge_projection(f, mesh.vertices[a][None], mesh.vertices[b][None], k, degree)[0]


def project_Qh(f, mesh, k, dofmap=None, degree=None):
    """{Q0 f, Qb f} as a :class:`WGFunction`."""
    dofmap = dofmap if dofmap is not None else DofMap(mesh, k)
    degree = cell_degree(k) if degree is None else degree
    out = WGFunction.zeros(dofmap)
    counts = np.array([len(c) for c in mesh.cells])
    interior = out.interior
    for nv in np.unique(counts):
        cells = np.flatnonzero(counts == nv)
        V = np.stack([mesh.vertices[mesh.cells[c]] for c in cells])
        interior[cells] = _cell_projection(f, V, mesh.centroid[cells],
                                           mesh.diameter[cells], k, degree)
    out.edge[:] = _edge_projection(f, mesh.vertices[mesh.edges[:, 0]],
                                   mesh.vertices[mesh.edges[:, 1]], k, degree)
    return out


def project_Pih(F, mesh, ci, k, degree=None):
    """L2 projection of a vector field onto [P_{k-1}(K)]^2; shape (2, dim P_{k-1})."""
    degree = cell_degree(k) if degree is None else degree
    c = mesh.cells[ci]
    V = mesh.vertices[c][None]
    cen, h = mesh.centroid[ci][None], mesh.diameter[ci:ci + 1]
    fx = _cell_projection(lambda x, y: F(x, y)[0], V, cen, h, k - 1, degree)[0]
    fy = _cell_projection(lambda x, y: F(x, y)[1], V, cen, h, k - 1, degree)[0]
    return np.stack([fx, fy])


# -- local forms -----------------------------------------------------------

def _check_positive(a_vals, cells=None, qpts=None):
    bad = np.argwhere(~(a_vals > 0.0))
    if len(bad):
        g, q = bad[0]
        cell = None if cells is None else int(cells[g])
        point = None if qpts is None else tuple(float(v) for v in qpts[g, q])
        raise CoefficientError(
            f"diffusion coefficient {a_vals[g, q]:.6g} <= 0 in cell {cell} at {point}",
            cell=cell, point=point)


def _gram(weights, gradw):
    # sum_q w_q gradw_m . gradw_n, exactly symmetric
    g, nq, _, nloc = gradw.shape
    X = (gradw * weights[:, :, None, None]).reshape(g, 2 * nq, nloc)
    K = X.transpose(0, 2, 1) @ gradw.reshape(g, 2 * nq, nloc)
    return 0.5 * (K + K.transpose(0, 2, 1))


def local_form_A(qw, a_vals, gradw, S, cells=None, qpts=None):
    """Local matrices of A_h(w; ., .): G^T W(a) G + S, batched over cells."""
    _check_positive(a_vals, cells, qpts)
    return _gram(qw * a_vals, gradw) + S


def local_form_D(qw, a_vals, au_vals, grad_w, phi, gradw, S, cells=None, qpts=None):
    """Local Jacobian matrices of D_h(w; ., .).

    ``grad_w`` (g, q, 2) is the weak gradient of the linearisation state at the
    quadrature points and ``phi`` (g, q, dim P_k) the cell basis there.  Row
    index = test DoF, column index = trial DoF.
    """
    A = local_form_A(qw, a_vals, gradw, S, cells, qpts)
    nk = phi.shape[-1]
    # (a_u(w0) grad_w w . grad_w v) per test DoF at each point
    t = np.einsum("gqc,gqcm->gqm", grad_w, gradw) * (qw * au_vals)[..., None]
    A[:, :, :nk] += np.einsum("gqm,gqi->gmi", t, phi)
    return A
