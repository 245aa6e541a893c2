"""L2 and Ritz projections, interpolants, regularized and discrete deltas.

All projections return interior dof vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import betainc, beta as beta_fn

from .fespace import FESpace, OperatorPair
from .geometry import GeometryError, barycentric, locate_point
from .quadrature import triangle_rule


class ProjectionError(ValueError):
    pass


def load_vector(space: FESpace, f: Callable, order: Optional[int] = None) -> np.ndarray:
    """``(f, phi_i)`` for interior basis functions."""
    qd = space.quadrature(order)
    vals = np.asarray(f(qd.points), dtype=float)
    return space.restrict(qd.B.T @ (qd.weights * vals))


def l2_project(space: FESpace, pair: OperatorPair, f: Callable, order: Optional[int] = None) -> np.ndarray:
    """``P_h f``: solve ``M c = (f, phi_i)``; ``order`` overrides the space's quadrature."""
    b = load_vector(space, f, order)
    c = pair.solve_M(b)
    res = np.linalg.norm(pair.M @ c - b)
    if res > 1e-12 * max(np.linalg.norm(b), 1e-300) and np.linalg.norm(b) > 0:
        raise ProjectionError(f"mass solve residual {res:.3e} too large")
    return c


def ritz_load(space: FESpace, pair: OperatorPair, grad_f: Callable, order: Optional[int] = None) -> np.ndarray:
    qd = space.quadrature(order)
    g = np.asarray(grad_f(qd.points), dtype=float)
    ag = np.einsum("mij,mj->mi", pair.coefficient(qd.points), g)
    return space.restrict(qd.Bx.T @ (qd.weights * ag[:, 0]) + qd.By.T @ (qd.weights * ag[:, 1]))


def ritz_project(space: FESpace, pair: OperatorPair, f: Callable, grad_f: Callable,
                 order: Optional[int] = None, boundary_tol: float = 1e-10) -> np.ndarray:
    """``R_h f``: solve ``A c = (a grad f, grad phi_i)``.

    ``f`` must vanish on the boundary; it is checked at the boundary nodes.
    """
    bnodes = space.dof_coords[space.boundary_dofs]
    if len(bnodes):
        fb = np.abs(np.asarray(f(bnodes), dtype=float))
        if fb.max() > boundary_tol:
            i = int(np.argmax(fb))
            raise ProjectionError(f"f does not vanish on the boundary: |f({bnodes[i].tolist()})| = {fb[i]:.3e}")
    return pair.solve_A(ritz_load(space, pair, grad_f, order))


def fe_function(space: FESpace, coeffs):
    """Callables ``(value, gradient)`` for a finite element function."""
    c = space.full(coeffs)

    def value(points):
        e, b = locate_point(space.mesh, np.atleast_2d(points))
        return space.basis_at(e, b) @ c

    def gradient(points):
        e, b = locate_point(space.mesh, np.atleast_2d(points))
        Gx, Gy = space.gradient_basis_at(e, b)
        return np.column_stack([Gx @ c, Gy @ c])

    return value, gradient


def lagrange_interpolate(space: FESpace, f: Callable) -> np.ndarray:
    """Nodal interpolant ``Pi_h f`` at the interior nodes (boundary values taken as zero)."""
    return np.asarray(f(space.dof_coords[space.interior]), dtype=float)


def _incidence(space: FESpace) -> sp.csr_matrix:
    ne, nl = space.elem_dofs.shape
    data = np.ones(ne * nl)
    return sp.csr_matrix((data, (space.elem_dofs.ravel(), np.repeat(np.arange(ne), nl))),
                         shape=(space.n_dofs, ne))


def clement_interpolate(space: FESpace, f: Callable, order: Optional[int] = None) -> np.ndarray:
    """Patch-average interpolant: node value = mean of ``f`` over the elements touching it."""
    qd = space.quadrature(order)
    ne = space.mesh.n_triangles
    fint = np.bincount(qd.element, weights=qd.weights * np.asarray(f(qd.points), dtype=float), minlength=ne)
    area = np.bincount(qd.element, weights=qd.weights, minlength=ne)
    E = _incidence(space)
    avg = (E @ fint) / (E @ area)
    return avg[space.interior]


def clement_patch_constant(space: FESpace) -> float:
    """``kappa``: largest node-to-patch-vertex distance over ``h``."""
    E = _incidence(space).tocoo()
    tri_pts = space.mesh.vertices[space.mesh.triangles]  # (ne, 3, 2)
    node = space.dof_coords[E.row]
    dist = np.linalg.norm(tri_pts[E.col] - node[:, None, :], axis=2).max(axis=1)
    far = np.zeros(space.n_dofs)
    np.maximum.at(far, E.row, dist)
    return float(far.max() / space.mesh.h)


@dataclass(frozen=True, eq=False)
class RegularizedDelta:
    """``q(x) b(x)`` supported on one element, reproducing point values of ``S_h``.

    ``b = (l0 l1 l2)**bump_power`` in barycentric coordinates of the element and
    ``q`` is a degree-``r`` polynomial stored by its local Lagrange coefficients.
    """

    x0: np.ndarray
    element: int
    poly_coeffs: np.ndarray
    bump_power: int
    space: FESpace

    @property
    def degree(self) -> int:
        return self.space.degree

    def _ref(self, points):
        e = np.full(len(points), self.element)
        _, bary = barycentric(self.space.mesh, e, points)
        return bary

    def evaluate_reference(self, bary) -> np.ndarray:
        q = self.space.reference.values(bary[:, 1:3]) @ self.poly_coeffs
        return q * np.prod(bary, axis=1) ** self.bump_power

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        bary = self._ref(pts)
        inside = np.all(bary >= 0, axis=1)
        out = np.zeros(len(pts))
        out[inside] = self.evaluate_reference(bary[inside])
        return out

    @property
    def polynomial_degree(self) -> int:
        return self.degree + 3 * self.bump_power

    def lp_norm(self, p: float, order: Optional[int] = None) -> float:
        _, _, det = self.space.jacobians
        area2 = det[self.element]
        if np.isinf(p):
            n = 60
            lat = np.array([(i, j) for j in range(n + 1) for i in range(n + 1 - j)]) / n
            bary = np.column_stack([1 - lat.sum(axis=1), lat])
            return float(np.abs(self.evaluate_reference(bary)).max())
        order = order or min(int(np.ceil(p * self.polynomial_degree)) + 6, 60)
        pts, w = triangle_rule(order)
        bary = np.column_stack([1 - pts.sum(axis=1), pts])
        return float((area2 * np.sum(w * np.abs(self.evaluate_reference(bary)) ** p)) ** (1.0 / p))


def regularized_delta(space: FESpace, x0, bump_power: int = 4) -> RegularizedDelta:
    if bump_power < 4:
        raise ProjectionError("bump power must be >= 4 for a C^3 regularized delta")
    x0 = np.asarray(x0, dtype=float)
    elem, bary0 = locate_point(space.mesh, x0)
    r = space.degree
    pts, w = triangle_rule(2 * r + 3 * bump_power)
    bary = np.column_stack([1 - pts.sum(axis=1), pts])
    phi = space.reference.values(pts)
    bump = np.prod(bary, axis=1) ** bump_power
    _, _, det = space.jacobians
    G = det[elem] * np.einsum("q,qk,ql->kl", w * bump, phi, phi)
    rhs = space.reference.values(bary0[None, 1:3])[0]
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > 1e14:
        raise ProjectionError("moment system is singular")
    q = np.linalg.solve(G, rhs)
    return RegularizedDelta(x0, int(elem), q, bump_power, space)


def delta_load(space: FESpace, delta: RegularizedDelta) -> np.ndarray:
    """``(delta, phi_i)`` on ``space``, which must equal or refine the delta's mesh."""
    mesh = space.mesh
    base = delta.space.mesh
    if not mesh.is_refinement_of(base):
        raise GeometryError("space is not nested in the regularized delta's mesh")
    elems = np.nonzero(mesh.ancestor_element(base) == delta.element)[0]
    order = 2 * max(space.degree, delta.degree) + 3 * delta.bump_power
    pts, w = triangle_rule(order)
    J, _, det = space.jacobians
    p0 = mesh.vertices[mesh.triangles[elems, 0]]
    xq = (p0[:, None, :] + np.einsum("eij,qj->eqi", J[elems], pts)).reshape(-1, 2)
    bary = delta._ref(xq)
    vals = delta.evaluate_reference(np.clip(bary, 0.0, None)).reshape(len(elems), -1)
    phi = space.reference.values(pts)
    loc = np.einsum("e,q,eq,ql->el", det[elems], w, vals, phi)
    b = np.zeros(space.n_dofs)
    np.add.at(b, space.elem_dofs[elems], loc)
    return space.restrict(b)


@dataclass(frozen=True)
class DecayFit:
    amplitude: float
    rate: float
    residual: float
    n_bins: int


def fit_decay(space: FESpace, coeffs, x0, floor: float = 1e-12) -> DecayFit:
    """Fit ``|c_i| <= A exp(-rate * |x_i - x0| / h)`` on the binned envelope of nodal values."""
    c = np.abs(space.restrict(coeffs))
    xy = space.dof_coords[space.interior]
    s = np.linalg.norm(xy - np.asarray(x0), axis=1) / space.mesh.h
    bins = np.floor(s).astype(int)
    env = np.zeros(bins.max() + 1)
    np.maximum.at(env, bins, c)
    keep = env > floor * env.max()
    x = np.nonzero(keep)[0] + 0.5
    y = np.log(env[keep])
    if len(x) < 2:
        return DecayFit(float(env.max()), float("nan"), float("nan"), len(x))
    Amat = np.column_stack([np.ones_like(x), -x])
    coef, *_ = np.linalg.lstsq(Amat, y, rcond=None)
    resid = float(np.sqrt(np.mean((Amat @ coef - y) ** 2)))
    return DecayFit(float(np.exp(coef[0])), float(coef[1]), resid, len(x))


def discrete_delta(space: FESpace, pair: OperatorPair, x0, bump_power: int = 4):
    """``P_h delta_x0`` and the exponential decay fit of its nodal values."""
    delta = x0 if isinstance(x0, RegularizedDelta) else regularized_delta(space, x0, bump_power)
    c = pair.solve_M(delta_load(space, delta))
    return c, fit_decay(space, c, delta.x0)


def smoothstep(s, k: int):
    """Degree ``2k+1`` polynomial step with ``k`` vanishing derivatives at 0 and 1."""
    s = np.clip(s, 0.0, 1.0)
    return betainc(k + 1, k + 1, s)


def smoothstep_derivative(s, k: int):
    inside = (s > 0) & (s < 1)
    sc = np.clip(s, 0.0, 1.0)
    return np.where(inside, sc**k * (1 - sc) ** k / beta_fn(k + 1, k + 1), 0.0)


@dataclass(frozen=True)
class RadialCutoff:
    """Radial function equal to 1 for ``|x - c| <= inner`` and 0 beyond ``outer``."""

    center: tuple
    inner: float
    outer: float
    smoothness: int

    def _s(self, points):
        rho = np.linalg.norm(np.atleast_2d(points) - np.asarray(self.center), axis=1)
        return rho, (self.outer - rho) / (self.outer - self.inner)

    def __call__(self, points):
        _, s = self._s(points)
        return smoothstep(s, self.smoothness)

    def gradient(self, points):
        pts = np.atleast_2d(points)
        rho, s = self._s(pts)
        ds = -smoothstep_derivative(s, self.smoothness) / (self.outer - self.inner)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rho[:, None] > 0, (pts - np.asarray(self.center)) / rho[:, None], 0.0)
        return ds[:, None] * unit


class SuperapproxHypothesisError(ProjectionError):
    pass


@dataclass(frozen=True)
class SuperapproxReport:
    lhs: float
    rhs: float
    ratio: float
    ritz_term: float
    cutoff_term: float
    d: float
    h: float
    kappa: float
    cutoff_constants: tuple


def superapprox_check(space: FESpace, pair: OperatorPair, center, radius: float, d: float, psi_h,
                      kappa: Optional[float] = None, order: Optional[int] = None) -> SuperapproxReport:
    """Both sides of the superapproximation bound for a cut-off finite element function.

    ``omega`` vanishes outside the disk ``D = B(center, radius)`` and equals 1 on
    ``B(center, radius - w)`` with ``w = min(d, radius)``; ``omega~`` is 1 on
    ``B_{0.7d}(D)`` and 0 outside ``B_{0.8d}(D)``. With
    ``chi = Pi_h(omega~ R_h(omega psi))`` the left side is
    ``d^2 |R_h(omega psi) - chi|_{H^1} + d |omega psi - chi|_{L^2}`` and the right
    side ``h |psi|_{L^2(B_d(D))}``.
    """
    h = space.mesh.h
    kappa = clement_patch_constant(space) if kappa is None else kappa
    if d < 10 * kappa * h:
        raise SuperapproxHypothesisError(f"d = {d:.4g} < 10 kappa h = {10 * kappa * h:.4g}")
    k = space.degree + 1
    w = min(d, radius)
    omega = RadialCutoff(tuple(center), radius - w, radius, k)
    omega_t = RadialCutoff(tuple(center), radius + 0.7 * d, radius + 0.8 * d, k)
    order = order or space.quadrature_order + 4
    qd = space.quadrature(order)
    psi = space.full(psi_h)
    pv = qd.B @ psi
    pg = np.column_stack([qd.Bx @ psi, qd.By @ psi])
    om = omega(qd.points)
    og = omega.gradient(qd.points)
    g = om * pv
    gg = pv[:, None] * og + om[:, None] * pg
    ag = np.einsum("mij,mj->mi", pair.coefficient(qd.points), gg)
    load = space.restrict(qd.Bx.T @ (qd.weights * ag[:, 0]) + qd.By.T @ (qd.weights * ag[:, 1]))
    R = space.full(pair.solve_A(load))
    chi = np.zeros(space.n_dofs)
    chi[space.interior] = omega_t(space.dof_coords[space.interior]) * R[space.interior]
    e = R - chi
    ev, ex, ey = qd.B @ e, qd.Bx @ e, qd.By @ e
    ritz = np.sqrt(np.sum(qd.weights * (ev**2 + ex**2 + ey**2)))
    cut = np.sqrt(np.sum(qd.weights * (g - qd.B @ chi) ** 2))
    lhs = d**2 * ritz + d * cut
    near = np.linalg.norm(qd.points - np.asarray(center), axis=1) <= radius + d
    rhs = h * np.sqrt(np.sum(qd.weights[near] * pv[near] ** 2))
    ratio = lhs / rhs if rhs > 0 else 0.0
    consts = (float(np.max(om)), float(np.max(np.linalg.norm(og, axis=1)) * d))
    return SuperapproxReport(float(lhs), float(rhs), float(ratio), float(ritz), float(cut), d, h, kappa, consts)
