"""Polynomial bases and quadrature on polygons and segments.

Cell polynomials use scaled monomials

    m_ab(x, y) = ((x - xc) / hK)**a * ((y - yc) / hK)**b,   a + b <= k,

in graded lexicographic order (1, X, Y, X^2, XY, Y^2, ...), centred at the
cell's area centroid and scaled by its diameter.  The first ``dim(k-1)``
functions of the degree-``k`` basis therefore span P_{k-1}.

Edge polynomials are Legendre polynomials in the parameter t in [-1, 1]
running along the edge's canonical (low -> high vertex index) direction.

Cell quadrature fans the polygon into triangles from its centroid and maps a
fully symmetric positive-weight triangle rule (Xiao-Gimbutas, via modepy)
onto each triangle.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

__all__ = [
    "MAX_DEGREE",
    "QuadratureError",
    "QuadRule",
    "CellBasis",
    "EdgeBasis",
    "dim_p",
    "monomial_exponents",
    "scaled_monomials",
    "scaled_monomial_gradients",
    "legendre_values",
    "triangle_rule",
    "gauss_legendre",
    "cell_quadrature",
    "edge_quadrature",
    "fan_quadrature",
    "mass_matrix",
]

#: Highest exactness degree available from the triangle-rule table.
MAX_DEGREE = 50


class QuadratureError(ValueError):
    pass


def dim_p(k):
    """Dimension of P_k in two variables."""
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


@lru_cache(maxsize=None)
def monomial_exponents(k):
    """Exponent pairs (a, b) of the graded-lex scaled monomials up to degree k."""
    return tuple((d - j, j) for d in range(k + 1) for j in range(d + 1))


def scaled_monomials(points, origin, scale, k):
    """Evaluate all scaled monomials of degree <= k.

    ``points`` has shape (..., 2); ``origin`` must broadcast against it and
    ``scale`` against ``points[..., 0]``.  Returns shape (..., dim_p(k)).
    """
    points = np.asarray(points, dtype=float)
    origin = np.asarray(origin, dtype=float)
    scale = np.asarray(scale, dtype=float)
    X = (points[..., 0] - origin[..., 0]) / scale
    Y = (points[..., 1] - origin[..., 1]) / scale
    xp = [np.ones_like(X)]
    yp = [np.ones_like(Y)]
    for _ in range(k):
        xp.append(xp[-1] * X)
        yp.append(yp[-1] * Y)
    return np.stack([xp[a] * yp[b] for a, b in monomial_exponents(k)], axis=-1)


def scaled_monomial_gradients(points, origin, scale, k):
    """Gradients of the scaled monomials; shape (..., dim_p(k), 2)."""
    points = np.asarray(points, dtype=float)
    origin = np.asarray(origin, dtype=float)
    scale = np.asarray(scale, dtype=float)
    X = (points[..., 0] - origin[..., 0]) / scale
    Y = (points[..., 1] - origin[..., 1]) / scale
    xp = [np.ones_like(X)]
    yp = [np.ones_like(Y)]
    for _ in range(k):
        xp.append(xp[-1] * X)
        yp.append(yp[-1] * Y)
    zero = np.zeros_like(X)
    gx, gy = [], []
    for a, b in monomial_exponents(k):
        gx.append(a * xp[a - 1] * yp[b] / scale if a > 0 else zero)
        gy.append(b * xp[a] * yp[b - 1] / scale if b > 0 else zero)
    return np.stack([np.stack(gx, axis=-1), np.stack(gy, axis=-1)], axis=-1)


def legendre_values(t, k):
    """Legendre polynomials P_0..P_k at t; shape (..., k+1)."""
    return legendre.legvander(np.asarray(t, dtype=float), k)


@dataclass(frozen=True)
class QuadRule:
    """Quadrature points and weights.

    For edge rules ``params`` holds the canonical parameter t of each point.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int
    params: np.ndarray | None = None

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True)
class CellBasis:
    degree: int
    origin: tuple
    scale: float

    @property
    def dim(self):
        return dim_p(self.degree)

    def values(self, points):
        return scaled_monomials(points, np.asarray(self.origin), self.scale, self.degree)

    def gradients(self, points):
        return scaled_monomial_gradients(points, np.asarray(self.origin), self.scale,
                                         self.degree)

    @classmethod
    def for_cell(cls, mesh, ci, degree):
        return cls(degree, tuple(mesh.centroid[ci]), float(mesh.diameter[ci]))


@dataclass(frozen=True)
class EdgeBasis:
    degree: int
    start: tuple
    end: tuple

    @property
    def dim(self):
        return self.degree + 1

    @property
    def length(self):
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    def param(self, points):
        """Canonical parameter t in [-1, 1] of points on the edge."""
        p0 = np.asarray(self.start)
        d = np.asarray(self.end) - p0
        s = ((np.asarray(points) - p0) @ d) / (d @ d)
        return 2.0 * s - 1.0

    def values(self, points):
        return legendre_values(self.param(points), self.degree)

    @classmethod
    def for_edge(cls, mesh, e, degree):
        a, b = mesh.edges[e]
        return cls(degree, tuple(mesh.vertices[a]), tuple(mesh.vertices[b]))


# -- quadrature ------------------------------------------------------------

def _check_degree(degree):
    degree = int(degree)
    if degree < 0:
        raise QuadratureError("quadrature degree must be non-negative")
    if degree > MAX_DEGREE:
        raise QuadratureError(f"quadrature degree {degree} exceeds the cap {MAX_DEGREE}")
    return degree


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Symmetric rule on the triangle (0,0), (1,0), (0,1).

    Returns reference points (n, 2) and weights summing to 1/2.
    """
    import modepy

    degree = _check_degree(degree)
    q = modepy.XiaoGimbutasSimplexQuadrature(max(degree, 1), 2)
    pts = 0.5 * (np.asarray(q.nodes).T + 1.0)
    wts = 0.25 * np.asarray(q.weights)
    pts.flags.writeable = False
    wts.flags.writeable = False
    return pts, wts


@lru_cache(maxsize=None)
def gauss_legendre(degree):
    """Gauss-Legendre nodes/weights on [-1, 1] exact to the given degree."""
    degree = _check_degree(degree)
    n = max(1, -(-(degree + 1) // 2))
    t, w = legendre.leggauss(n)
    t.flags.writeable = False
    w.flags.writeable = False
    return t, w


def fan_quadrature(vertices, centroid, degree):
    """Batched fan-triangulation rule.

    ``vertices`` (ncell, nv, 2) CCW, ``centroid`` (ncell, 2).  Returns points
    (ncell, nv * nq, 2) and weights (ncell, nv * nq).  Every fan triangle must
    have positive area (cells star-shaped about their centroid).
    """
    vertices = np.asarray(vertices, dtype=float)
    centroid = np.asarray(centroid, dtype=float)
    ref, rw = triangle_rule(degree)
    c = centroid[:, None, :]
    a = vertices - c
    b = np.roll(vertices, -1, axis=1) - c
    tri_area = 0.5 * (a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
    if np.any(tri_area <= 0.0):
        raise QuadratureError("cell is not star-shaped with respect to its centroid")
    # points: c + r0 * a + r1 * b  -> (ncell, nv, nq, 2)
    pts = (c[:, :, None, :]
           + ref[None, None, :, 0, None] * a[:, :, None, :]
           + ref[None, None, :, 1, None] * b[:, :, None, :])
    wts = 2.0 * tri_area[:, :, None] * rw[None, None, :]
    ncell, nv = vertices.shape[:2]
    return pts.reshape(ncell, -1, 2), wts.reshape(ncell, -1)


def cell_quadrature(vertices, degree, centroid=None):
    """Rule on one polygon, exact for bivariate polynomials up to ``degree``."""
    vertices = np.asarray(vertices, dtype=float)
    if centroid is None:
        xy, xn = vertices, np.roll(vertices, -1, axis=0)
        cross = xy[:, 0] * xn[:, 1] - xn[:, 0] * xy[:, 1]
        centroid = ((xy + xn) * cross[:, None]).sum(axis=0) / (3.0 * cross.sum())
    pts, wts = fan_quadrature(vertices[None], np.asarray(centroid)[None], degree)
    return QuadRule(pts[0], wts[0], int(degree))


def edge_quadrature(start, end, degree):
    """Gauss-Legendre rule on the segment start -> end."""
    t, w = gauss_legendre(degree)
    p0 = np.asarray(start, dtype=float)
    p1 = np.asarray(end, dtype=float)
    length = float(np.linalg.norm(p1 - p0))
    pts = p0 + 0.5 * (t[:, None] + 1.0) * (p1 - p0)
    return QuadRule(pts, 0.5 * length * w, int(degree), params=np.array(t))


def mass_matrix(basis, rule):
    """Mass matrix of a cell or edge basis; raises if not positive definite."""
    vals = basis.values(rule.points)
    wv = rule.weights[:, None] * vals
    M = wv.T @ vals
    M = 0.5 * (M + M.T)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise QuadratureError("mass matrix is not positive definite "
                              "(degenerate cell or insufficient quadrature)") from None
    return M
