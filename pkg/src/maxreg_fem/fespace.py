"""Lagrange finite element spaces with homogeneous Dirichlet conditions.

Dof vectors come in two sizes: *full* vectors indexed by all Lagrange nodes
and *interior* vectors indexed by ``space.interior`` (nodes off the
boundary). Operators are reduced to interior dofs; helpers convert between
the two. Any function accepting a dof vector takes either size.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Mesh, locate_point
from .quadrature import triangle_rule


class AssemblyError(ValueError):
    pass


class EllipticityError(AssemblyError):
    """The coefficient violates its declared ellipticity bounds."""


@dataclass(frozen=True)
class ReferenceElement:
    """Degree-``r`` Lagrange basis on the triangle (0,0), (1,0), (0,1)."""

    degree: int

    @cached_property
    def lattice(self) -> np.ndarray:
        r = self.degree
        return np.array([(i, j) for j in range(r + 1) for i in range(r + 1 - j)], dtype=np.int64)

    @property
    def nodes(self) -> np.ndarray:
        return self.lattice / self.degree

    @property
    def n_local(self) -> int:
        r = self.degree
        return (r + 1) * (r + 2) // 2

    @cached_property
    def _monomials(self):
        return self.lattice.copy()

    @cached_property
    def _coeffs(self):
        V = self._mono(self.nodes)
        return np.linalg.inv(V)

    def _mono(self, x):
        e = self._monomials
        return x[:, 0:1] ** e[:, 0] * x[:, 1:2] ** e[:, 1]

    def values(self, x) -> np.ndarray:
        """Basis values at reference points, shape (m, n_local)."""
        return self._mono(np.atleast_2d(x)) @ self._coeffs

    def gradients(self, x) -> np.ndarray:
        """Reference gradients, shape (m, n_local, 2)."""
        x = np.atleast_2d(x)
        e = self._monomials
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = np.where(e[:, 0] > 0, e[:, 0] * x[:, 0:1] ** np.maximum(e[:, 0] - 1, 0), 0.0) * x[:, 1:2] ** e[:, 1]
            dy = np.where(e[:, 1] > 0, e[:, 1] * x[:, 1:2] ** np.maximum(e[:, 1] - 1, 0), 0.0) * x[:, 0:1] ** e[:, 0]
        return np.stack([dx @ self._coeffs, dy @ self._coeffs], axis=2)


@dataclass(frozen=True, eq=False)
class QuadratureData:
    """Physical quadrature points of a space with sparse basis evaluation maps."""

    points: np.ndarray  # (N, 2)
    weights: np.ndarray  # (N,)
    element: np.ndarray  # (N,)
    B: sp.csr_matrix  # values, (N, n_dofs)
    Bx: sp.csr_matrix
    By: sp.csr_matrix


@dataclass(frozen=True, eq=False)
class FESpace:
    mesh: Mesh
    degree: int
    quadrature_order: int
    elem_dofs: np.ndarray
    dof_coords: np.ndarray
    boundary_dofs: np.ndarray

    @property
    def n_dofs(self) -> int:
        return len(self.dof_coords)

    @cached_property
    def interior(self) -> np.ndarray:
        return np.nonzero(~self.boundary_dofs)[0]

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    @cached_property
    def reference(self) -> ReferenceElement:
        return ReferenceElement(self.degree)

    @cached_property
    def jacobians(self):
        """Per-element ``(J, J^{-T}, |det J|)`` of the affine map from the reference triangle."""
        p = self.mesh.vertices[self.mesh.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        JinvT = np.linalg.inv(J).transpose(0, 2, 1)
        return J, JinvT, np.abs(det)

    def full(self, c) -> np.ndarray:
        """Full-length dof vector(s); interior input is padded with boundary zeros."""
        c = np.asarray(c, dtype=float)
        if c.shape[-1] == self.n_dofs:
            return c
        if c.shape[-1] != self.n_interior:
            raise ValueError(f"dof vector length {c.shape[-1]} matches neither {self.n_dofs} nor {self.n_interior}")
        out = np.zeros(c.shape[:-1] + (self.n_dofs,))
        out[..., self.interior] = c
        return out

    def restrict(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.shape[-1] == self.n_interior:
            return c
        return c[..., self.interior]

    def quadrature(self, order: Optional[int] = None) -> QuadratureData:
        order = self.quadrature_order if order is None else order
        cache = self.__dict__.setdefault("_quad_cache", {})
        if order not in cache:
            cache[order] = self._build_quadrature(order)
        return cache[order]

    def _build_quadrature(self, order):
        ref_pts, ref_w = triangle_rule(order)
        J, JinvT, det = self.jacobians
        p0 = self.mesh.vertices[self.mesh.triangles[:, 0]]
        pts = p0[:, None, :] + np.einsum("eij,qj->eqi", J, ref_pts)
        w = det[:, None] * ref_w[None, :]
        ne, nq = w.shape
        phi = self.reference.values(ref_pts)  # (nq, nl)
        dphi = self.reference.gradients(ref_pts)  # (nq, nl, 2)
        gphys = np.einsum("eij,qlj->eqli", JinvT, dphi)  # (ne, nq, nl, 2)
        nl = self.reference.n_local
        rows = np.repeat(np.arange(ne * nq), nl)
        cols = np.repeat(self.elem_dofs[:, None, :], nq, axis=1).ravel()
        shape = (ne * nq, self.n_dofs)
        B = sp.csr_matrix((np.broadcast_to(phi, (ne, nq, nl)).ravel(), (rows, cols)), shape=shape)
        Bx = sp.csr_matrix((gphys[..., 0].ravel(), (rows, cols)), shape=shape)
        By = sp.csr_matrix((gphys[..., 1].ravel(), (rows, cols)), shape=shape)
        return QuadratureData(pts.reshape(-1, 2), w.ravel(), np.repeat(np.arange(ne), nq), B, Bx, By)

    def basis_at(self, elems, bary) -> sp.csr_matrix:
        """Sparse map from full dof vectors to values at points given by (element, barycentric)."""
        elems = np.atleast_1d(elems)
        bary = np.atleast_2d(bary)
        vals = self.reference.values(bary[:, 1:3])
        nl = self.reference.n_local
        rows = np.repeat(np.arange(len(elems)), nl)
        return sp.csr_matrix((vals.ravel(), (rows, self.elem_dofs[elems].ravel())), shape=(len(elems), self.n_dofs))

    def gradient_basis_at(self, elems, bary):
        elems = np.atleast_1d(elems)
        bary = np.atleast_2d(bary)
        _, JinvT, _ = self.jacobians
        g = np.einsum("eij,elj->eli", JinvT[elems], self.reference.gradients(bary[:, 1:3]))
        nl = self.reference.n_local
        rows = np.repeat(np.arange(len(elems)), nl)
        cols = self.elem_dofs[elems].ravel()
        shape = (len(elems), self.n_dofs)
        return (sp.csr_matrix((g[..., 0].ravel(), (rows, cols)), shape=shape),
                sp.csr_matrix((g[..., 1].ravel(), (rows, cols)), shape=shape))

    def locate(self, points):
        return locate_point(self.mesh, np.atleast_2d(points))


def build_space(mesh: Mesh, r: int = 1, quadrature_order: Optional[int] = None) -> FESpace:
    """Degree-``r`` continuous Lagrange space on ``mesh``.

    ``quadrature_order`` defaults to ``2r + 2`` and must be at least ``2r``.
    Global node numbering: nodes are identified by their integer barycentric
    weights with respect to global vertex ids, so shared edge nodes coincide.
    """
    if r < 1:
        raise AssemblyError("degree must be >= 1")
    if quadrature_order is None:
        quadrature_order = 2 * r + 2
    if quadrature_order < 2 * r:
        raise AssemblyError(f"quadrature order {quadrature_order} < 2r = {2 * r} under-integrates the mass matrix")
    ref = ReferenceElement(r)
    lat = ref.lattice
    kb = np.column_stack([r - lat.sum(axis=1), lat[:, 0], lat[:, 1]])  # (nl, 3)
    t = mesh.triangles
    ne, nl = len(t), len(lat)
    verts = np.broadcast_to(t[:, None, :], (ne, nl, 3))
    wts = np.broadcast_to(kb[None], (ne, nl, 3))
    vk = np.where(wts > 0, verts, -1)
    wk = np.where(wts > 0, wts, 0)
    order = np.argsort(vk, axis=2, kind="stable")
    vk = np.take_along_axis(vk, order, axis=2)
    wk = np.take_along_axis(wk, order, axis=2)
    keys = np.concatenate([vk, wk], axis=2).reshape(-1, 6)
    # vertices keep their own numbers; other nodes follow in key order
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    u_is_vertex = (uniq[:, 3:] == r).any(axis=1)
    new_id = np.empty(len(uniq), dtype=np.int64)
    vid = np.where(uniq[:, 3] == r, uniq[:, 0], np.where(uniq[:, 4] == r, uniq[:, 1], uniq[:, 2]))
    new_id[u_is_vertex] = vid[u_is_vertex]
    nv = mesh.n_vertices
    new_id[~u_is_vertex] = nv + np.arange(int((~u_is_vertex).sum()))
    elem_dofs = new_id[inv].reshape(ne, nl)
    n_dofs = len(uniq)
    coords = np.empty((n_dofs, 2))
    pv = mesh.vertices[t]  # (ne, 3, 2)
    node_xy = np.einsum("lk,ekd->eld", kb / r, pv)
    coords[elem_dofs.ravel()] = node_xy.reshape(-1, 2)
    # boundary: mesh boundary vertices, and non-vertex nodes on an edge used by one triangle
    edges, tri_edges, counts = mesh.edge_data
    bnd = np.zeros(n_dofs, dtype=bool)
    bnd[:nv] = mesh.boundary
    if r > 1:
        zero = kb == 0  # (nl, 3): weight on local vertex k vanishes -> node on edge opposite k
        on_edge = zero.sum(axis=1) == 1
        for l in np.nonzero(on_edge)[0]:
            k = int(np.nonzero(zero[l])[0][0])
            b_el = counts[tri_edges[:, k]] == 1
            bnd[elem_dofs[b_el, l]] = True
    for arr in (elem_dofs, coords, bnd):
        arr.setflags(write=False)
    return FESpace(mesh, r, quadrature_order, elem_dofs, coords, bnd)


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Symmetric 2x2 diffusion coefficient ``a(x)``.

    ``eval`` maps an (m, 2) array of points to an (m, 2, 2) array. ``alpha``
    is the supremum of admissible ``alpha`` with ``a in W^{1, 2 + alpha}``
    (``inf`` for Lipschitz fields); ``gradient`` optionally returns
    ``d a_ij / d x_k`` with shape (m, 2, 2, 2).
    """

    eval: Callable[[np.ndarray], np.ndarray]
    Lambda: float
    regularity_tag: str = "constant"
    params: dict = field(default_factory=dict)
    name: str = ""
    alpha: float = float("inf")
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        a = np.asarray(self.eval(pts), dtype=float)
        # exact symmetry regardless of the closed form's rounding
        return 0.5 * (a + a.transpose(0, 2, 1))

    def certificate(self) -> dict:
        """JSON-ready summary; an unbounded ``alpha`` (smooth coefficient) is written as ``None``."""
        return {"name": self.name, "Lambda": self.Lambda, "regularity": self.regularity_tag,
                "alpha_sup": self.alpha if np.isfinite(self.alpha) else None, "params": {k: _jsonable(v) for k, v in self.params.items()}}


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    return v


@dataclass(frozen=True)
class CoefficientReport:
    min_eig: float
    max_eig: float
    Lambda: float
    passed: bool
    worst_point: Optional[tuple] = None


def validate_coefficient(a: CoefficientField, space: FESpace, quadrature_order: Optional[int] = None,
                         rtol: float = 1e-12) -> CoefficientReport:
    """Rayleigh bounds of ``a`` over the quadrature points of ``space``."""
    qd = space.quadrature(quadrature_order)
    eig = np.linalg.eigvalsh(a(qd.points))
    lo, hi = eig[:, 0], eig[:, 1]
    bad = (lo < (1 - rtol) / a.Lambda) | (hi > a.Lambda * (1 + rtol)) | ~np.isfinite(lo) | ~np.isfinite(hi)
    worst = None
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        worst = tuple(float(x) for x in qd.points[i])
    return CoefficientReport(float(lo.min()), float(hi.max()), a.Lambda, not bad.any(), worst)


@dataclass(frozen=True, eq=False)
class OperatorPair:
    """Mass and stiffness matrices; ``M``/``A`` are reduced to interior dofs."""

    M: sp.csr_matrix
    A: sp.csr_matrix
    M_full: sp.csr_matrix
    A_full: sp.csr_matrix
    space: FESpace
    coefficient: CoefficientField
    quadrature_order: int

    @cached_property
    def solve_M(self):
        return spla.factorized(self.M.tocsc())

    @cached_property
    def solve_A(self):
        return spla.factorized(self.A.tocsc())


def _local_matrices(space: FESpace, a: Optional[CoefficientField], order: int):
    ref_pts, ref_w = triangle_rule(order)
    J, JinvT, det = space.jacobians
    phi = space.reference.values(ref_pts)
    dphi = space.reference.gradients(ref_pts)
    Mloc = np.einsum("e,q,qi,qj->eij", det, ref_w, phi, phi)
    if a is None:
        return Mloc, None
    p0 = space.mesh.vertices[space.mesh.triangles[:, 0]]
    pts = p0[:, None, :] + np.einsum("eij,qj->eqi", J, ref_pts)
    ne, nq = pts.shape[:2]
    aq = a(pts.reshape(-1, 2)).reshape(ne, nq, 2, 2)
    g = np.einsum("eij,qlj->eqli", JinvT, dphi)
    Aloc = np.einsum("e,q,eqik,eqkl,eqjl->eij", det, ref_w, g, aq, g, optimize=True)
    return Mloc, Aloc


def _scatter(space: FESpace, loc):
    ne, nl, _ = loc.shape
    rows = np.repeat(space.elem_dofs, nl, axis=1).ravel()
    cols = np.tile(space.elem_dofs, (1, nl)).ravel()
    mat = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(space.n_dofs, space.n_dofs)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble(space: FESpace, a: CoefficientField, quadrature_order: Optional[int] = None) -> OperatorPair:
    """Mass matrix and ``(a grad u, grad v)`` stiffness matrix, reduced to interior dofs."""
    order = space.quadrature_order if quadrature_order is None else quadrature_order
    rep = validate_coefficient(a, space, order)
    if not rep.passed:
        raise EllipticityError(f"ellipticity bound Lambda={a.Lambda} violated at point {rep.worst_point}")
    Mloc, Aloc = _local_matrices(space, a, order)
    M_full = _scatter(space, Mloc)
    A_full = _scatter(space, Aloc)
    # exact symmetry of the assembled operators
    M_full = ((M_full + M_full.T) * 0.5).tocsr()
    A_full = ((A_full + A_full.T) * 0.5).tocsr()
    I = space.interior
    M = M_full[I][:, I].tocsr()
    A = A_full[I][:, I].tocsr()
    return OperatorPair(M, A, M_full, A_full, space, a, order)


def quadrature_perturbation(space: FESpace, a: CoefficientField) -> float:
    """Relative Frobenius change of the stiffness matrix when the quadrature order doubles."""
    A1 = assemble(space, a).A
    A2 = assemble(space, a, 2 * space.quadrature_order).A
    return float(spla.norm(A2 - A1) / spla.norm(A1))


def evaluate_field(space: FESpace, coeffs, points) -> np.ndarray:
    """Point values of a finite element function (full or interior dof vector)."""
    c = space.full(coeffs)
    elems, bary = locate_point(space.mesh, np.atleast_2d(points))
    return space.basis_at(elems, bary) @ c


def export_triplets(matrix, path) -> None:
    """Write a sparse matrix as ``i j value`` lines."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i} {j} {float(v)!r}\n")


def read_triplets(path, shape) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)


def export_dofs(vec, path) -> None:
    """Write a dof vector as ``index value`` lines."""
    with open(path, "w") as fh:
        for i, v in enumerate(np.asarray(vec, dtype=float)):
            fh.write(f"{i} {float(v)!r}\n")
