"""Convex polygons and nested quasi-uniform triangulations.

Meshes are built from a coarse template (the polygon itself for triangles,
a single diagonal split for parallelograms, a centroid fan otherwise) and
then refined by midpoint subdivision, so every mesh in a family is nested
in its predecessor and all elements of a level are similar to a template
element.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

GEOM_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for invalid polygons, meshes and out-of-domain queries."""


class DomainError(GeometryError):
    """A query point lies outside the closed domain."""


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass(frozen=True)
class Polygon:
    """Strictly convex polygon with counterclockwise vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("a polygon needs at least 3 two-dimensional vertices")
        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                if np.allclose(v[i], v[j], rtol=0, atol=GEOM_TOL):
                    raise GeometryError(f"repeated vertex {j}")
        edges = np.roll(v, -1, axis=0) - v
        turn = _cross(edges, np.roll(edges, -1, axis=0))
        scale = np.linalg.norm(edges, axis=1) * np.linalg.norm(np.roll(edges, -1, axis=0), axis=1)
        bad = np.nonzero(turn <= GEOM_TOL * scale)[0]
        if bad.size:
            raise GeometryError(f"polygon is not strictly convex at vertex {(bad[0] + 1) % n}")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def unit_square(cls) -> "Polygon":
        return cls([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

    @classmethod
    def regular(cls, n: int, radius: float = 1.0, center=(0.0, 0.0)) -> "Polygon":
        ang = 2 * np.pi * np.arange(n) / n
        return cls(np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)]))

    @property
    def edges(self) -> np.ndarray:
        """(n, 2, 2) array of edge endpoints."""
        v = self.vertices
        return np.stack([v, np.roll(v, -1, axis=0)], axis=1)

    @property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(e[:, 1] - e[:, 0], axis=1)

    @property
    def area(self) -> float:
        v = self.vertices
        return 0.5 * float(np.sum(_cross(v, np.roll(v, -1, axis=0))))

    @property
    def interior_angles(self) -> np.ndarray:
        v = self.vertices
        prev = np.roll(v, 1, axis=0) - v
        nxt = np.roll(v, -1, axis=0) - v
        cosang = np.sum(prev * nxt, axis=1) / (np.linalg.norm(prev, axis=1) * np.linalg.norm(nxt, axis=1))
        return np.arccos(np.clip(cosang, -1.0, 1.0))

    @property
    def diameter(self) -> float:
        v = self.vertices
        return float(np.max(np.linalg.norm(v[:, None] - v[None], axis=2)))

    def is_parallelogram(self) -> bool:
        if len(self.vertices) != 4:
            return False
        v = self.vertices
        return bool(np.allclose(v[1] - v[0], v[2] - v[3], atol=GEOM_TOL * self.diameter))

    def signed_distances(self, points) -> np.ndarray:
        """Distance of each point to each edge line, positive inside; shape (m, n_edges)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        e = self.edges
        t = e[:, 1] - e[:, 0]
        t = t / np.linalg.norm(t, axis=1)[:, None]
        nrm = np.column_stack([-t[:, 1], t[:, 0]])  # inward normal for ccw
        return np.einsum("mkd,kd->mk", p[:, None, :] - e[None, :, 0, :], nrm)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        return np.all(self.signed_distances(points) >= -tol, axis=1)

    def on_boundary(self, points, tol: float) -> np.ndarray:
        d = self.signed_distances(points)
        return np.all(d >= -tol, axis=1) & np.any(np.abs(d) <= tol, axis=1)


@dataclass(frozen=True)
class MeshQuality:
    h: float
    rho_min: float
    K: float


@dataclass(frozen=True)
class DomainMetrics:
    """Domain constants for the dyadic decomposition.

    ``K0`` is ``max(1, R0, 1 + 1/sin(min(theta_min, pi/2)), 1 + L_max/(2 R0))``:
    the second term covers balls centred on a side that reach an adjacent side
    (enclosed by a ball around the shared corner), the third covers balls that
    reach a non-adjacent side.
    """

    R0: float
    K0: float
    min_angle: float
    formula: str = "K0 = max(1, R0, 1 + 1/sin(min(theta_min, pi/2)), 1 + L_max/(2*R0))"

    def d(self, j: int) -> float:
        return 2.0 ** (-j - 3) * self.R0 / self.K0**2


def _point_segment_distance(p, a, b):
    ab = b - a
    s = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + s * ab)))


def domain_metrics(polygon: Polygon) -> DomainMetrics:
    v = polygon.vertices
    n = len(v)
    dists = []
    for i in range(n):
        for k in range(n):
            # edge k joins vertex k and k+1; it contains vertex i iff i in {k, k+1}
            if i == k or i == (k + 1) % n:
                continue
            dists.append(_point_segment_distance(v[i], v[k], v[(k + 1) % n]))
    R0 = min(dists)
    theta = float(np.min(polygon.interior_angles))
    K0 = max(
        1.0,
        R0,
        1.0 + 1.0 / math.sin(min(theta, math.pi / 2)),
        1.0 + float(np.max(polygon.edge_lengths)) / (2.0 * R0),
    )
    return DomainMetrics(R0=R0, K0=K0, min_angle=theta)


def _tri_geometry(p, tri):
    a, b, c = p[tri[:, 0]], p[tri[:, 1]], p[tri[:, 2]]
    la = np.linalg.norm(b - c, axis=1)
    lb = np.linalg.norm(c - a, axis=1)
    lc = np.linalg.norm(a - b, axis=1)
    area = 0.5 * _cross(b - a, c - a)
    diam = np.maximum(np.maximum(la, lb), lc)
    inradius = 2.0 * np.abs(area) / (la + lb + lc)
    return area, diam, inradius


def _edges_of(triangles):
    """Sorted unique edges plus, per triangle, the index of each local edge.

    Local edge k is opposite local vertex k.
    """
    loc = np.array([[1, 2], [2, 0], [0, 1]])
    all_e = np.sort(triangles[:, loc].reshape(-1, 2), axis=1)
    edges, inv, counts = np.unique(all_e, axis=0, return_inverse=True, return_counts=True)
    return edges, inv.reshape(-1, 3), counts


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of a convex polygon.

    ``parent_element[i]`` is the index of the parent triangle containing child
    ``i`` when ``parent`` is set.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    polygon: Polygon
    parent: Optional["Mesh"] = None
    parent_element: Optional[np.ndarray] = None
    spacing: float = field(default=float("nan"))

    def __post_init__(self):
        p = np.array(self.vertices, dtype=float)
        t = np.array(self.triangles, dtype=np.int64)
        b = np.array(self.boundary, dtype=bool)
        for arr in (p, t, b):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", p)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "boundary", b)
        if self.parent_element is not None:
            pe = np.array(self.parent_element, dtype=np.int64)
            pe.setflags(write=False)
            object.__setattr__(self, "parent_element", pe)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _geometry(self):
        return _tri_geometry(self.vertices, self.triangles)

    @property
    def areas(self) -> np.ndarray:
        return self._geometry[0]

    @property
    def diameters(self) -> np.ndarray:
        return self._geometry[1]

    @property
    def h(self) -> float:
        return float(np.max(self.diameters))

    @cached_property
    def edge_data(self):
        return _edges_of(self.triangles)

    @property
    def level(self) -> int:
        return 0 if self.parent is None else self.parent.level + 1

    def ancestors(self):
        m = self.parent
        while m is not None:
            yield m
            m = m.parent

    def is_refinement_of(self, other: "Mesh") -> bool:
        return other is self or any(a is other for a in self.ancestors())

    def ancestor_element(self, other: "Mesh") -> np.ndarray:
        """Index in ``other`` of the element containing each element of self."""
        idx = np.arange(self.n_triangles)
        m = self
        while m is not other:
            if m.parent is None:
                raise GeometryError("meshes are not nested")
            idx = m.parent_element[idx]
            m = m.parent
        return idx

    @cached_property
    def _centroid_tree(self):
        c = self.vertices[self.triangles].mean(axis=1)
        return cKDTree(c)

    def validate(self) -> None:
        """Assert orientation, conformity, boundary flags and nestedness."""
        p, t = self.vertices, self.triangles
        area, diam, _ = _tri_geometry(p, t)
        if np.any(area <= GEOM_TOL * diam**2):
            raise GeometryError(f"triangle {int(np.argmin(area))} is not positively oriented")
        edges, _, counts = self.edge_data
        if np.any(counts > 2):
            raise GeometryError("an edge is shared by more than two triangles")
        if p.shape[0] - len(edges) + t.shape[0] != 1:
            raise GeometryError("triangulation is not a conforming disk (Euler characteristic)")
        if not np.isclose(area.sum(), self.polygon.area, rtol=1e-12, atol=0):
            raise GeometryError("triangles do not cover the polygon")
        tol = GEOM_TOL * max(self.polygon.diameter, 1.0) * 10
        bnd_edges = edges[counts == 1]
        if not np.all(self.polygon.on_boundary(p[bnd_edges.ravel()], tol)):
            raise GeometryError("an unshared edge lies inside the polygon (hanging node)")
        expected = self.polygon.on_boundary(p, tol)
        if not np.array_equal(expected, self.boundary):
            raise GeometryError("boundary flags do not match the polygon boundary")
        if self.parent is not None:
            par = self.parent
            pe = self.parent_element
            pa = par.areas
            if not np.allclose(np.bincount(pe, weights=area, minlength=par.n_triangles), pa, rtol=1e-12, atol=0):
                raise GeometryError("child areas do not sum to parent areas")
            _, bary = barycentric(par, np.repeat(pe, 3), p[t].reshape(-1, 2))
            if np.any(bary < -1e-12):
                raise GeometryError("child vertex outside its parent triangle")


def barycentric(mesh: Mesh, elems, points):
    """Barycentric coordinates of ``points[i]`` in triangle ``elems[i]``."""
    elems = np.asarray(elems)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tri = mesh.vertices[mesh.triangles[elems]]
    a = tri[:, 0]
    T = np.stack([tri[:, 1] - a, tri[:, 2] - a], axis=2)  # (m, 2, 2)
    rhs = pts - a
    lam12 = np.linalg.solve(T, rhs[..., None])[..., 0]
    bary = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
    return elems, bary


def measure_quality(mesh: Mesh) -> MeshQuality:
    _, diam, inr = mesh._geometry
    h = float(diam.max())
    rho = float(inr.min())
    return MeshQuality(h=h, rho_min=rho, K=h / rho)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four similar children through edge midpoints."""
    p, t = mesh.vertices, mesh.triangles
    edges, tri_edges, counts = mesh.edge_data
    nv = len(p)
    mids = 0.5 * (p[edges[:, 0]] + p[edges[:, 1]])
    newp = np.vstack([p, mids])
    newb = np.concatenate([mesh.boundary, counts == 1])
    m = nv + tri_edges  # m[:, k] = midpoint opposite local vertex k
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    m12, m20, m01 = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack(
        [
            np.column_stack([v0, m01, m20]),
            np.column_stack([m01, v1, m12]),
            np.column_stack([m20, m12, v2]),
            np.column_stack([m12, m20, m01]),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent_el = np.repeat(np.arange(len(t)), 4)
    return Mesh(newp, children, newb, mesh.polygon, parent=mesh, parent_element=parent_el,
                spacing=mesh.spacing / 2)


def _template(polygon: Polygon):
    v = polygon.vertices
    n = len(v)
    if n == 3:
        return v.copy(), np.array([[0, 1, 2]]), float(polygon.edge_lengths.max())
    if polygon.is_parallelogram():
        d02 = np.linalg.norm(v[2] - v[0])
        d13 = np.linalg.norm(v[3] - v[1])
        if d02 <= d13 * (1 + 1e-12):
            tri = np.array([[0, 1, 2], [0, 2, 3]])
        else:
            tri = np.array([[0, 1, 3], [1, 2, 3]])
        return v.copy(), tri, float(polygon.edge_lengths.max())
    c = v.mean(axis=0)
    pts = np.vstack([v, c])
    tri = np.array([[i, (i + 1) % n, n] for i in range(n)])
    spokes = np.linalg.norm(v - c, axis=1)
    return pts, tri, float(max(polygon.edge_lengths.max(), spokes.max()))


def build_polygon_mesh(polygon: Polygon, target_h: float) -> Mesh:
    """Nested template mesh of ``polygon`` with edge spacing at most ``target_h``.

    The spacing is the longest template edge (diagonals of the parallelogram
    template excluded) divided by ``2**levels``; for the unit square and
    ``target_h = 1/n`` this is the usual ``n x n`` grid cut by diagonals.
    The element diameter ``mesh.h`` can exceed the spacing by the template's
    aspect factor (``sqrt(2)`` for the square).
    """
    if not isinstance(polygon, Polygon):
        polygon = Polygon(polygon)
    if not (target_h > 0 and math.isfinite(target_h)):
        raise GeometryError(f"degenerate target_h {target_h!r}")
    if target_h > polygon.edge_lengths.min() * (1 + 1e-12):
        raise GeometryError("target_h exceeds the shortest polygon edge")
    pts, tri, spacing = _template(polygon)
    tol = GEOM_TOL * max(polygon.diameter, 1.0) * 10
    mesh = Mesh(pts, tri, polygon.on_boundary(pts, tol), polygon, spacing=spacing)
    while mesh.spacing > target_h * (1 + 1e-12):
        mesh = refine_uniform(mesh)
    return mesh


def unit_square_mesh(n: int) -> Mesh:
    """Diagonal ``n x n`` grid of the unit square; ``n`` must be a power of two."""
    if n < 1 or n & (n - 1):
        raise GeometryError("n must be a power of two for nested square meshes")
    return build_polygon_mesh(Polygon.unit_square(), 1.0 / n)


def locate_point(mesh: Mesh, points):
    """Containing triangle and barycentric coordinates for each point.

    Points on shared edges or vertices go to the lowest-index incident triangle.
    Returns ``(elements, bary)``; a single point gives scalar/1-D results.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    m = len(pts)
    h = mesh.h
    tol = 1e-12
    cand = mesh._centroid_tree.query_ball_point(pts, r=h * (1 + 1e-9))
    lens = np.fromiter((len(c) for c in cand), dtype=np.int64, count=m)
    owner = np.repeat(np.arange(m), lens)
    flat = np.fromiter((e for c in cand for e in c), dtype=np.int64, count=int(lens.sum()))
    _, bary = barycentric(mesh, flat, pts[owner])
    ok = np.all(bary >= -tol, axis=1)
    elem = np.full(m, np.iinfo(np.int64).max)
    np.minimum.at(elem, owner[ok], flat[ok])
    missing = elem == np.iinfo(np.int64).max
    if np.any(missing):
        i = int(np.nonzero(missing)[0][0])
        raise DomainError(f"point {pts[i].tolist()} lies outside the domain")
    _, b = barycentric(mesh, elem, pts)
    b = np.clip(b, 0.0, 1.0)
    b /= b.sum(axis=1, keepdims=True)
    if single:
        return int(elem[0]), b[0]
    return elem, b


def write_mesh(mesh: Mesh, path_or_buf) -> None:
    """Plain-text mesh: ``nv nt``, vertex lines ``x y flag``, triangle lines ``i j k``."""
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    for (x, y), b in zip(mesh.vertices, mesh.boundary):
        lines.append(f"{float(x)!r} {float(y)!r} {int(b)}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    text = "\n".join(lines) + "\n"
    if isinstance(path_or_buf, io.TextIOBase):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w") as fh:
            fh.write(text)


def read_mesh(path_or_buf, polygon: Optional[Polygon] = None) -> Mesh:
    """Inverse of :func:`write_mesh`.

    Without ``polygon`` the domain is taken as the convex hull of the flagged
    boundary vertices.
    """
    if isinstance(path_or_buf, io.TextIOBase):
        text = path_or_buf.read()
    else:
        with open(path_or_buf) as fh:
            text = fh.read()
    rows = text.split("\n")
    nv, nt = (int(s) for s in rows[0].split())
    vert = np.empty((nv, 2))
    flags = np.empty(nv, dtype=bool)
    for i in range(nv):
        x, y, b = rows[1 + i].split()
        vert[i] = float(x), float(y)
        flags[i] = bool(int(b))
    tri = np.array([[int(s) for s in rows[1 + nv + k].split()] for k in range(nt)], dtype=np.int64)
    if polygon is None:
        from scipy.spatial import ConvexHull

        bp = vert[flags]
        hull = ConvexHull(bp)
        polygon = Polygon(bp[hull.vertices])
    return Mesh(vert, tri, flags, polygon)
