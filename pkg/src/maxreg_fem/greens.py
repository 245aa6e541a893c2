"""Discrete and reference Green's functions and the diagnostics built on ``F = Gamma_h - Gamma``.

Fields are evaluated on the quadrature points of the finer of the two nested
meshes; time derivatives always come from the eigen-expansion of each field.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .evolution import BochnerField, SpectralDecomposition
from .fespace import FESpace
from .geometry import DomainMetrics, GeometryError, barycentric, locate_point
from .projections import RegularizedDelta, delta_load, regularized_delta
from .quadrature import trapezoid_weights


@dataclass(eq=False)
class GreenField:
    """``Gamma(t) = E(t) Gamma(0)`` on ``space``, with snapshots on ``field.time_grid``."""

    x0: np.ndarray
    space: FESpace
    spec: SpectralDecomposition
    initial: np.ndarray
    field: BochnerField
    delta: RegularizedDelta
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.field.time_grid

    @property
    def modal_initial(self) -> np.ndarray:
        c = self.meta.get("_modal")
        if c is None:
            c = self.meta["_modal"] = self.spec.modal(self.initial)
        return c

    def derivative(self, order: int, rows=slice(None)) -> np.ndarray:
        """Interior coefficients of ``d^l/dt^l Gamma`` at ``times[rows]``."""
        t = self.times[rows]
        lam = self.spec.eigenvalues
        return ((-lam) ** order * np.exp(-np.outer(t, lam)) * self.modal_initial) @ self.spec.eigenvectors.T


def _build_field(space, spec, delta, initial, grid, grading, meta):
    c = spec.modal(initial)
    snaps = (np.exp(-np.outer(grid, spec.eigenvalues)) * c) @ spec.eigenvectors.T
    snaps[0] = initial
    meta = dict(meta)
    meta["_modal"] = c
    return GreenField(delta.x0, space, spec, initial, BochnerField(grid, snaps, grading), delta, meta)


def discrete_green(space: FESpace, spec: SpectralDecomposition, x0, grid, grading: float = 2.0,
                   bump_power: int = 4) -> GreenField:
    """``Gamma_h(t) = E_h(t) P_h delta~_{x0}``."""
    delta = x0 if isinstance(x0, RegularizedDelta) else regularized_delta(space, x0, bump_power)
    initial = spec.synthesize(spec.load_modal(delta_load(space, delta)))
    return _build_field(space, spec, delta, initial, np.asarray(grid, dtype=float), grading, {"kind": "discrete"})


def reference_green(fine_space: FESpace, fine_spec: SpectralDecomposition, source, grid,
                    grading: float = 2.0) -> GreenField:
    """Fine-space surrogate of the regularized Green's function.

    ``source`` is the coarse regularized delta (or a coarse ``GreenField``); the
    initial value is its L2 projection onto the fine space. ``meta['nesting_levels']``
    records how many refinements separate the two meshes.
    """
    delta = source.delta if isinstance(source, GreenField) else source
    coarse_mesh = delta.space.mesh
    if not fine_space.mesh.is_refinement_of(coarse_mesh):
        raise GeometryError("reference space is not nested in the coarse mesh")
    levels = fine_space.mesh.level - coarse_mesh.level
    initial = fine_spec.synthesize(fine_spec.load_modal(delta_load(fine_space, delta)))
    return _build_field(fine_space, fine_spec, delta, initial, np.asarray(grid, dtype=float), grading,
                        {"kind": "reference", "nesting_levels": levels, "shallow_nesting": levels < 2})


class NodalInterpolant:
    """``Pi_h`` of a fine field onto a coarse nested space, taken snapshot by snapshot."""

    def __init__(self, fine: GreenField, coarse_space: FESpace):
        self.fine = fine
        self.space = coarse_space
        self.spec = None
        fc = fine.space.dof_coords
        tree = cKDTree(fc)
        pts = coarse_space.dof_coords[coarse_space.interior]
        dist, idx = tree.query(pts)
        if np.any(dist > 1e-10 * max(1.0, fine.space.mesh.polygon.diameter)):
            raise GeometryError("coarse nodes are not fine nodes")
        pos = np.full(fine.space.n_dofs, -1)
        pos[fine.space.interior] = np.arange(fine.space.n_interior)
        self._take = pos[idx]
        if np.any(self._take < 0):
            raise GeometryError("an interior coarse node is a fine boundary node")
        self.times = fine.times

    def derivative(self, order: int, rows=slice(None)) -> np.ndarray:
        return self.fine.derivative(order, rows)[:, self._take]


class GreenDifference:
    """``F = coarse - fine`` at the quadrature points of the finer space.

    ``coarse`` may be a ``GreenField`` or a ``NodalInterpolant``.
    """

    def __init__(self, coarse, fine: GreenField, order: Optional[int] = None):
        if coarse.space.mesh.is_refinement_of(fine.space.mesh) and coarse.space.mesh is not fine.space.mesh:
            coarse, fine, self.sign = fine, coarse, -1.0
        else:
            self.sign = 1.0
        if not fine.space.mesh.is_refinement_of(coarse.space.mesh):
            raise GeometryError("Green fields live on non-nested meshes")
        if len(coarse.times) != len(fine.times) or not np.array_equal(coarse.times, fine.times):
            raise ValueError("Green fields use different time grids")
        self.coarse, self.fine = coarse, fine
        self.times = np.asarray(fine.times)
        self.x0 = np.asarray(fine.x0 if isinstance(fine, GreenField) else coarse.x0)
        fs, cs = fine.space, coarse.space
        qd = fs.quadrature(order)
        self.qd = qd
        anc = fs.mesh.ancestor_element(cs.mesh)[qd.element]
        _, bary = barycentric(cs.mesh, anc, qd.points)
        Ic = cs.interior
        self._Bc = cs.basis_at(anc, bary)[:, Ic].tocsr()
        gx, gy = cs.gradient_basis_at(anc, bary)
        self._Gc = (gx[:, Ic].tocsr(), gy[:, Ic].tocsr())
        If = fs.interior
        self._Bf = qd.B[:, If].tocsr()
        self._Gf = (qd.Bx[:, If].tocsr(), qd.By[:, If].tocsr())
        self._chunk = max(1, 2_000_000 // max(len(qd.weights), 1))
        self._sums = {}

    @property
    def dist(self) -> np.ndarray:
        return np.linalg.norm(self.qd.points - self.x0, axis=1)

    def chunks(self):
        n = len(self.times)
        for i in range(0, n, self._chunk):
            yield slice(i, min(i + self._chunk, n))

    def evaluate(self, order: int, rows, gradient: bool = False):
        """``d^l F/dt^l`` (and its gradient) at ``times[rows]`` x quadrature points."""
        c = self.coarse.derivative(order, rows)
        f = self.fine.derivative(order, rows)
        val = self.sign * ((self._Bc @ c.T) - (self._Bf @ f.T)).T
        if not gradient:
            return val, None
        gx = self.sign * ((self._Gc[0] @ c.T) - (self._Gf[0] @ f.T)).T
        gy = self.sign * ((self._Gc[1] @ c.T) - (self._Gf[1] @ f.T)).T
        return val, (gx, gy)

    def coarse_initial(self):
        """Values and gradients of the coarse field at ``t = 0`` on the quadrature points."""
        c = self.coarse.derivative(0, slice(0, 1))[0]
        return self._Bc @ c, self._Gc[0] @ c, self._Gc[1] @ c


def green_error_functional(coarse: GreenField, fine: GreenField, order: Optional[int] = None):
    """``(I1, I2) = (int int |dF/dt|, int int t |d2F/dt2|)`` over ``Omega x (0, T)``."""
    diff = coarse if isinstance(coarse, GreenDifference) else GreenDifference(coarse, fine, order)
    wt = trapezoid_weights(diff.times)
    w = diff.qd.weights
    I1 = I2 = 0.0
    for rows in diff.chunks():
        ft, _ = diff.evaluate(1, rows)
        ftt, _ = diff.evaluate(2, rows)
        I1 += float(wt[rows] @ (np.abs(ft) @ w))
        I2 += float((wt[rows] * diff.times[rows]) @ (np.abs(ftt) @ w))
    return I1, I2


@dataclass(frozen=True)
class DyadicDecomposition:
    """Parabolic shells ``Q_j = {d_j < max(|x - x0|, t^{1/2}) <= 2 d_j}`` around ``x0``.

    Indices: ``0..J_star`` for ``Q_0..Q_{J_star}`` and ``-1`` for the innermost set
    ``Q_*``. ``Q_0`` collects everything beyond ``2 d_1`` so that the shells
    partition ``Omega x (0, T)``. In the trivial branch (``h`` too large) there is a
    single shell ``Q_0`` with no innermost set.
    """

    x0: tuple
    base: float  # R0 K0^{-2}
    J_star: int
    C_star: float
    h: float
    T: float
    trivial: bool

    def d(self, j):
        return self.base * 2.0 ** (-np.asarray(j, dtype=float) - 3)

    @property
    def d_list(self) -> np.ndarray:
        return self.d(np.arange(0, self.J_star + 1))

    def index(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if self.trivial:
            return np.zeros(rho.shape, dtype=int)
        d0 = self.d(0)
        with np.errstate(divide="ignore"):
            j = np.floor(np.log2(d0 / np.maximum(rho, 1e-300))).astype(int) + 1
        j = np.where(rho > d0, 0, j)
        return np.where(rho <= self.d(self.J_star), -1, j)

    def shell_index(self, x, t) -> np.ndarray:
        """Shell of each ``(x_i, t_k)``; returns shape ``(len(t), len(x))``."""
        r = np.linalg.norm(np.atleast_2d(x) - np.asarray(self.x0), axis=1)
        rho = np.maximum(r[None, :], np.sqrt(np.atleast_1d(t))[:, None])
        return self.index(rho)

    def space_index(self, x) -> np.ndarray:
        """Spatial shell ``Omega_j`` (``-1`` for ``Omega_*``)."""
        return self.index(np.linalg.norm(np.atleast_2d(x) - np.asarray(self.x0), axis=1))

    def slot(self, idx) -> np.ndarray:
        """Map shell indices to ``0..J_star + 1`` with the innermost set last."""
        return np.where(idx < 0, self.J_star + 1, idx)

    def neighbourhood(self, j: int, k: int) -> np.ndarray:
        """Slots of the union of shells ``j-k..j+k`` (innermost included when ``j + k > J_star``)."""
        lo, hi = max(0, j - k), min(j + k, self.J_star)
        slots = list(range(lo, hi + 1))
        if j + k > self.J_star and not self.trivial:
            slots.append(self.J_star + 1)
        return np.array(slots, dtype=int)


def dyadic_decomposition(metrics: DomainMetrics, x0, h: float, C_star: float = 10.0,
                         T: float = 1.0) -> DyadicDecomposition:
    base = metrics.R0 / metrics.K0**2
    x0 = tuple(float(v) for v in x0)
    if h >= base / (16 * C_star):
        return DyadicDecomposition(x0, base, 0, C_star, h, T, True)
    J = int(np.floor(np.log2(base / (8 * C_star * h))))
    return DyadicDecomposition(x0, base, J, C_star, h, T, False)


QUANTITIES = ("F", "gF", "Ft", "gFt", "Ftt")


def shell_sums(diff: GreenDifference, dec: DyadicDecomposition) -> dict:
    """Squared ``L^2(Q_j)`` norms per shell slot of ``F``, ``grad F``, ``F_t``, ``grad F_t``, ``F_tt``."""
    key = dec
    if key in diff._sums:
        return diff._sums[key]
    nslot = dec.J_star + 2
    out = {q: np.zeros(nslot) for q in QUANTITIES}
    out["points"] = np.zeros(nslot)
    wt = trapezoid_weights(diff.times)
    w = diff.qd.weights
    r = diff.dist
    for rows in diff.chunks():
        slots = dec.slot(dec.index(np.maximum(r[None, :], np.sqrt(diff.times[rows])[:, None])))
        W = wt[rows][:, None] * w[None, :]
        flat = slots.ravel()
        out["points"] += np.bincount(flat, minlength=nslot)
        for order, vname, gname in ((0, "F", "gF"), (1, "Ft", "gFt"), (2, "Ftt", None)):
            v, g = diff.evaluate(order, rows, gradient=gname is not None)
            out[vname] += np.bincount(flat, weights=(W * v**2).ravel(), minlength=nslot)
            if gname:
                out[gname] += np.bincount(flat, weights=(W * (g[0] ** 2 + g[1] ** 2)).ravel(), minlength=nslot)
    diff._sums[key] = out
    return out


@dataclass(frozen=True)
class KappaReport:
    contributions: tuple
    d: tuple
    total: float
    J_star: int
    C_star: float
    trivial: bool
    terms: tuple = ()


def kappa_functional(diff: GreenDifference, dec: DyadicDecomposition) -> KappaReport:
    """``sum_j d_j^2 (d_j^{-1} |grad F| + |F_t| + d_j^2 |F_tt|)`` over ``Q_0..Q_{J_star}`` in ``L^2(Q_j)``."""
    s = shell_sums(diff, dec)
    contrib, terms = [], []
    for j, dj in enumerate(dec.d_list):
        t = (np.sqrt(s["gF"][j]) / dj, np.sqrt(s["Ft"][j]), dj**2 * np.sqrt(s["Ftt"][j]))
        terms.append(tuple(float(x) for x in t))
        contrib.append(float(dj**2 * sum(t)))
    return KappaReport(tuple(contrib), tuple(float(x) for x in dec.d_list), float(sum(contrib)),
                       dec.J_star, dec.C_star, dec.trivial, tuple(terms))


@dataclass(frozen=True)
class LocalEnergyReport:
    j: int
    lhs: float
    I: float
    X: float
    H: float
    tail: float
    m: float

    @property
    def rhs(self) -> float:
        return self.I + self.X + self.H + self.tail

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else 0.0


def local_energy_ratio(diff: GreenDifference, interp_diff: GreenDifference, dec: DyadicDecomposition,
                       j: int, h: float, m: float = 5.0) -> LocalEnergyReport:
    """Both sides of the local energy estimate on ``Q_j`` with ``e = F``.

    ``interp_diff`` is ``Pi_h Gamma - Gamma`` (a ``GreenDifference`` whose coarse
    member is a ``NodalInterpolant``); the triple-primed sets are the shells
    ``j-3..j+3``.
    """
    if dec.trivial or not 1 <= j <= dec.J_star:
        raise ValueError(f"shell index {j} outside 1..{dec.J_star}")
    s = shell_sums(diff, dec)
    x = shell_sums(interp_diff, dec)
    dj = float(dec.d(j))
    nb = dec.neighbourhood(j, 3)

    def on(sums, q, slots):
        return float(np.sqrt(sums[q][slots].sum()))

    lhs = on(s, "Ft", [j]) + on(s, "gF", [j]) / dj
    v0, gx0, gy0 = diff.coarse_initial()
    sp_slots = dec.slot(dec.space_index(diff.qd.points))
    mask = np.isin(sp_slots, nb)
    w = diff.qd.weights[mask]
    l2 = np.sqrt(w @ v0[mask] ** 2)
    g2 = w @ (gx0[mask] ** 2 + gy0[mask] ** 2)
    I = l2 / dj + np.sqrt(l2**2 + g2)
    X = dj * on(x, "gFt", nb) + on(x, "Ft", nb) + on(x, "gF", nb) / dj + on(x, "F", nb) / dj**2
    H = (h / dj) ** m * (on(s, "Ft", nb) + on(s, "gF", nb) / dj)
    tail = on(s, "F", nb) / dj**2
    return LocalEnergyReport(j, float(lhs), float(I), float(X), float(H), float(tail), m)


def heat_kernel_square(t: float, x, y, n_images: int = 5) -> np.ndarray:
    """Dirichlet heat kernel of the unit square by the method of images, ``K[i, k] = G(t, x_i, y_k)``."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    m = np.arange(-n_images, n_images + 1)

    def k1(a, b):
        g = lambda z: np.exp(-z**2 / (4 * t)) / np.sqrt(4 * np.pi * t)
        da = a[:, None, None] - b[None, :, None] - 2 * m[None, None, :]
        sa = a[:, None, None] + b[None, :, None] - 2 * m[None, None, :]
        return (g(da) - g(sa)).sum(axis=2)

    return k1(x[:, 0], y[:, 0]) * k1(x[:, 1], y[:, 1])


def eigen_kernel(spec: SpectralDecomposition, t: float, x, y) -> np.ndarray:
    """``K[i, k] = sum_j exp(-lambda_j t) v_j(x_i) v_j(y_k)``."""
    space = spec.pair.space

    def modes(p):
        e, b = locate_point(space.mesh, np.atleast_2d(p))
        return space.basis_at(e, b)[:, space.interior] @ spec.eigenvectors

    Vx, Vy = modes(x), modes(y)
    return (Vx * np.exp(-t * spec.eigenvalues)) @ Vy.T


@dataclass(frozen=True)
class TailFit:
    C: float
    residual: float
    n_points: int


def gaussian_tail_fit(gf: GreenField, h: float, floor: float = 1e-10) -> TailFit:
    """Smallest ``C`` with ``|Gamma| <= C (t^{1/2} + r)^{-2} exp(-r^2 / (C t))`` where ``max(t^{1/2}, r) >= 2h``.

    Sampled at interior nodes and positive grid times; ``residual`` is the RMS of
    ``log(bound / |Gamma|)`` over the sampled points above ``floor * max|Gamma|``.
    """
    space = gf.space
    xy = space.dof_coords[space.interior]
    r = np.linalg.norm(xy - gf.x0, axis=1)
    t = gf.times[1:]
    vals = np.abs(gf.field.snapshots[1:])
    R = np.broadcast_to(r, vals.shape)
    Tm = np.broadcast_to(t[:, None], vals.shape)
    adm = (np.maximum(np.sqrt(Tm), R) >= 2 * h) & (vals > floor * vals.max())
    v, rr, tt = vals[adm], R[adm], Tm[adm]
    if v.size == 0:
        return TailFit(0.0, 0.0, 0)
    s = np.sqrt(tt) + rr
    target = np.log(v) + 2 * np.log(s)

    # u = log C solves u - r^2 / (t e^u) = target; the left side increases with u
    lo = np.full(v.shape, -50.0)
    hi = np.full(v.shape, 50.0)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        g = mid - rr**2 / (tt * np.exp(mid)) - target
        hi = np.where(g >= 0, mid, hi)
        lo = np.where(g >= 0, lo, mid)
    C = float(np.exp(hi.max()))
    logb = np.log(C) - 2 * np.log(s) - rr**2 / (C * tt)
    resid = float(np.sqrt(np.mean((logb - np.log(v)) ** 2)))
    return TailFit(C, resid, int(v.size))


def l1_profile(gf: GreenField) -> np.ndarray:
    """``|Gamma(t)|_{L^1}`` on the grid."""
    qd = gf.space.quadrature()
    vals = qd.B[:, gf.space.interior] @ gf.field.snapshots.T
    return qd.weights @ np.abs(vals)
