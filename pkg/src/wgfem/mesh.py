"""Two-dimensional polygonal meshes with edge topology and geometry.

A :class:`Mesh` is built from a vertex array and a list of cells, each cell
being the CCW-ordered list of its vertex indices.  Everything else (edges,
boundary flags, areas, normals, diameters) is derived.  Meshes are immutable
once constructed.

Generators: :func:`build_rectangular` (uniform N x N squares on the unit
square) and :func:`build_perturbed_quad` (the same grid with interior vertices
jittered by a reproducible 64-bit LCG).  :func:`import_mesh` reads the JSON
mesh format ``{"vertices": [[x, y], ...], "cells": [[i0, i1, ...], ...]}``.
"""

from __future__ import annotations

import json
import logging

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "Mesh",
    "MeshError",
    "build_rectangular",
    "build_perturbed_quad",
    "import_mesh",
    "export_mesh",
    "Lcg64",
]


class MeshError(ValueError):
    """Invalid mesh input or geometry."""


def _readonly(a):
    a = np.asarray(a)
    a.flags.writeable = False
    return a


def _signed_area(xy):
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _segments_intersect(p1, p2, q1, q2, tol=0.0):
    """Closed-segment intersection test (touching counts)."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - tol <= c[0] <= max(a[0], b[0]) + tol
                and min(a[1], b[1]) - tol <= c[1] <= max(a[1], b[1]) + tol)

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and \
       ((d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)):
        return True
    if abs(d1) <= tol and on_seg(q1, q2, p1):
        return True
    if abs(d2) <= tol and on_seg(q1, q2, p2):
        return True
    if abs(d3) <= tol and on_seg(p1, p2, q1):
        return True
    if abs(d4) <= tol and on_seg(p1, p2, q2):
        return True
    return False


def _is_simple(xy):
    n = len(xy)
    if n == 3:
        return abs(_signed_area(xy)) > 0.0
    for i in range(n):
        a0, a1 = xy[i], xy[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # adjacent through vertex 0
            if _segments_intersect(a0, a1, xy[j], xy[(j + 1) % n]):
                return False
    return True


class Mesh:
    """Immutable polygonal mesh.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : tuple of int arrays, CCW vertex indices per cell
    edges : (ne, 2) int array, canonical direction ``lo -> hi`` vertex index
    edge_cells : (ne, 2) int array, adjacent cells; ``[:, 1] == -1`` on the boundary
    boundary : (ne,) bool array
    cell_edges : tuple of int arrays; local edge ``i`` joins local vertices ``i, i+1``
    cell_edge_sign : tuple of int arrays, +1 where the CCW traversal follows
        the canonical edge direction
    cell_normals : tuple of (n_i, 2) arrays, unit outward normals per local edge
    area, centroid, diameter : per-cell geometry (area centroid; max vertex distance)
    edge_length, edge_midpoint : per-edge geometry
    structured_n : ``N`` for a uniform ``N x N`` grid of the unit square, else None
    n_reversed : number of input cells that were given clockwise and reversed
    """

    def __init__(self, vertices, cells, *, structured_n=None, reorient=False):
        vertices = np.array(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (n, 2) array")
        if not np.all(np.isfinite(vertices)):
            raise MeshError("vertices contain non-finite coordinates")
        nv = len(vertices)

        cell_list = []
        n_reversed = 0
        for ci, c in enumerate(cells):
            c = np.array(c, dtype=np.int64).ravel()
            if len(c) < 3:
                raise MeshError(f"cell {ci} has fewer than 3 vertices")
            if c.min() < 0 or c.max() >= nv:
                raise MeshError(f"cell {ci} references a vertex index outside [0, {nv})")
            if len(np.unique(c)) != len(c):
                raise MeshError(f"cell {ci} repeats a vertex index")
            sa = _signed_area(vertices[c])
            if sa == 0.0:
                raise MeshError(f"cell {ci} has zero area")
            if sa < 0.0:
                if not reorient:
                    raise MeshError(f"cell {ci} is not counter-clockwise")
                c = c[::-1].copy()
                n_reversed += 1
            if not _is_simple(vertices[c]):
                raise MeshError(f"cell {ci} is not a simple polygon")
            cell_list.append(c)
        if not cell_list:
            raise MeshError("mesh has no cells")
        if n_reversed:
            logger.warning("reversed %d clockwise cell(s) to CCW", n_reversed)

        used = np.zeros(nv, dtype=bool)
        for c in cell_list:
            used[c] = True
        if not used.all():
            raise MeshError(f"{int((~used).sum())} vertices are not used by any cell")

        # edges in first-seen order (cell order, then local CCW order)
        edge_id = {}
        edges = []
        edge_cells = []
        cell_edges = []
        cell_sign = []
        for ci, c in enumerate(cell_list):
            n = len(c)
            ids = np.empty(n, dtype=np.int64)
            sg = np.empty(n, dtype=np.int64)
            for i in range(n):
                a, b = int(c[i]), int(c[(i + 1) % n])
                key = (a, b) if a < b else (b, a)
                e = edge_id.get(key)
                if e is None:
                    e = len(edges)
                    edge_id[key] = e
                    edges.append(key)
                    edge_cells.append([ci, -1])
                else:
                    if edge_cells[e][1] != -1:
                        raise MeshError(f"edge {key} is shared by more than two cells")
                    edge_cells[e][1] = ci
                ids[i] = e
                sg[i] = 1 if a < b else -1
            cell_edges.append(ids)
            cell_sign.append(sg)

        edges = np.array(edges, dtype=np.int64)
        edge_cells = np.array(edge_cells, dtype=np.int64)
        # a shared edge must be traversed in opposite directions by its two cells
        for e, (c0, c1) in enumerate(edge_cells):
            if c1 < 0:
                continue
            s0 = cell_sign[c0][np.flatnonzero(cell_edges[c0] == e)[0]]
            s1 = cell_sign[c1][np.flatnonzero(cell_edges[c1] == e)[0]]
            if s0 == s1:
                raise MeshError(f"cells {c0} and {c1} overlap along edge {e}")

        self.vertices = _readonly(vertices)
        self.cells = tuple(_readonly(c) for c in cell_list)
        self.edges = _readonly(edges)
        self.edge_cells = _readonly(edge_cells)
        self.boundary = _readonly(edge_cells[:, 1] < 0)
        self.cell_edges = tuple(_readonly(x) for x in cell_edges)
        self.cell_edge_sign = tuple(_readonly(x) for x in cell_sign)
        self.structured_n = structured_n
        self.n_reversed = n_reversed
        self._compute_geometry()

    def _compute_geometry(self):
        V = self.vertices
        nc = len(self.cells)
        area = np.empty(nc)
        centroid = np.empty((nc, 2))
        diameter = np.empty(nc)
        normals = []
        for ci, c in enumerate(self.cells):
            xy = V[c]
            xn = np.roll(xy, -1, axis=0)
            cross = xy[:, 0] * xn[:, 1] - xn[:, 0] * xy[:, 1]
            a = 0.5 * cross.sum()
            area[ci] = a
            centroid[ci] = ((xy + xn) * cross[:, None]).sum(axis=0) / (6.0 * a)
            d = xy[:, None, :] - xy[None, :, :]
            diameter[ci] = np.sqrt((d ** 2).sum(axis=-1).max())
            t = xn - xy
            nrm = np.stack([t[:, 1], -t[:, 0]], axis=1)
            nrm /= np.linalg.norm(nrm, axis=1)[:, None]
            normals.append(_readonly(nrm))
        p0 = V[self.edges[:, 0]]
        p1 = V[self.edges[:, 1]]
        self.area = _readonly(area)
        self.centroid = _readonly(centroid)
        self.diameter = _readonly(diameter)
        self.cell_normals = tuple(normals)
        self.edge_length = _readonly(np.linalg.norm(p1 - p0, axis=1))
        self.edge_midpoint = _readonly(0.5 * (p0 + p1))

    # -- queries ---------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def h(self):
        """Largest cell diameter."""
        return float(self.diameter.max())

    def cell_size(self, kind="area"):
        """Per-cell length scale: ``"area"`` gives sqrt(|K|), ``"diameter"`` diam(K)."""
        if kind == "area":
            return np.sqrt(self.area)
        if kind == "diameter":
            return self.diameter
        raise ValueError(f"unknown cell size kind {kind!r}")

    def cell_vertices(self, ci):
        return self.vertices[self.cells[ci]]

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def closure_residual(self, ci):
        """Sum of ``h_e * n_e`` over the edges of a cell; zero for a closed polygon."""
        xy = self.cell_vertices(ci)
        lengths = np.linalg.norm(np.roll(xy, -1, axis=0) - xy, axis=1)
        return (lengths[:, None] * self.cell_normals[ci]).sum(axis=0)

    def __repr__(self):
        return (f"Mesh(n_vertices={self.n_vertices}, n_cells={self.n_cells}, "
                f"n_edges={self.n_edges}, h={self.h:.4g})")


# -- generators ------------------------------------------------------------

def _grid_cells(n):
    cells = []
    for j in range(n):
        for i in range(n):
            v0 = j * (n + 1) + i
            cells.append([v0, v0 + 1, v0 + n + 2, v0 + n + 1])
    return cells


def _grid_vertices(n):
    t = np.arange(n + 1) / n
    X, Y = np.meshgrid(t, t)
    return np.column_stack([X.ravel(), Y.ravel()])


def build_rectangular(n):
    """Uniform ``n x n`` square mesh of the unit square.

    Cells are numbered row-major from the bottom-left corner, so cell
    ``j * n + i`` occupies ``[i/n, (i+1)/n] x [j/n, (j+1)/n]``.
    """
    n = int(n)
    if n < 1:
        raise MeshError("n must be a positive integer")
    return Mesh(_grid_vertices(n), _grid_cells(n), structured_n=n)


class Lcg64:
    """Knuth's MMIX linear congruential generator, modulo 2**64.

    ``x <- 6364136223846793005 * x + 1442695040888963407``; the top 53 bits of
    each state give a double in [0, 1).  Pure integer arithmetic, so streams
    are identical on every platform.
    """

    A = 6364136223846793005
    C = 1442695040888963407
    MASK = (1 << 64) - 1

    def __init__(self, seed):
        self.state = int(seed) & self.MASK

    def next_u64(self):
        self.state = (self.A * self.state + self.C) & self.MASK
        return self.state

    def uniform(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def build_perturbed_quad(n, delta, seed):
    """Quadrilateral ``n x n`` mesh with jittered interior vertices.

    Each interior grid vertex is moved by ``delta / n * (2 U - 1)`` in x and
    then in y, with ``U`` drawn from :class:`Lcg64` in row-major vertex order.
    Boundary vertices stay put, so the mesh still tiles the unit square.
    """
    n = int(n)
    if n < 1:
        raise MeshError("n must be a positive integer")
    delta = float(delta)
    if not 0.0 <= delta < 0.5:
        raise MeshError("delta must lie in [0, 0.5)")
    V = _grid_vertices(n)
    rng = Lcg64(seed)
    scale = delta / n
    for j in range(1, n):
        for i in range(1, n):
            v = j * (n + 1) + i
            dx = scale * (2.0 * rng.uniform() - 1.0)
            dy = scale * (2.0 * rng.uniform() - 1.0)
            V[v, 0] += dx
            V[v, 1] += dy
    return Mesh(V, _grid_cells(n), structured_n=n if delta == 0.0 else None)


# -- file format -------------------------------------------------------------

def import_mesh(text):
    """Parse the JSON mesh format.

    Clockwise cells are reversed (counted in ``Mesh.n_reversed``); all other
    defects raise :class:`MeshError`.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshError(f"malformed mesh file: {exc}") from None
    if not isinstance(data, dict) or "vertices" not in data or "cells" not in data:
        raise MeshError("mesh file must be an object with 'vertices' and 'cells'")
    verts = data["vertices"]
    cells = data["cells"]
    if not isinstance(verts, list) or not all(
            isinstance(p, list) and len(p) == 2
            and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)
            for p in verts):
        raise MeshError("'vertices' must be a list of [x, y] number pairs")
    if not isinstance(cells, list) or not all(
            isinstance(c, list) and all(isinstance(i, int) and not isinstance(i, bool) for i in c)
            for c in cells):
        raise MeshError("'cells' must be a list of integer index lists")
    if not verts:
        raise MeshError("mesh file has no vertices")
    return Mesh(np.array(verts, dtype=float), cells, reorient=True)


def export_mesh(mesh):
    """Serialize a mesh to the JSON mesh format."""
    return json.dumps({
        "vertices": mesh.vertices.tolist(),
        "cells": [c.tolist() for c in mesh.cells],
    })
