"""Spatial and Bochner norms of finite element fields."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .evolution import BochnerField, SpectralDecomposition, propagate
from .fespace import FESpace
from .quadrature import trapezoid_weights

LATTICE = 15


@dataclass(frozen=True)
class NormSpec:
    """``L^p((0,T); X)`` with ``X = L^q`` or ``W^{1,q}`` (``derivative='gradient'``)."""

    p: float = 2.0
    q: float = 2.0
    derivative: str = "none"
    grading: float = 2.0

    def __post_init__(self):
        for name, v in (("p", self.p), ("q", self.q)):
            if not v > 1:
                raise ValueError(f"exponent {name} = {v} must lie in (1, inf]")
        if self.derivative not in ("none", "gradient"):
            raise ValueError("derivative must be 'none' or 'gradient'")
        if self.grading < 1:
            raise ValueError("grading exponent must be >= 1")


@lru_cache(maxsize=None)
def _lattice(n: int):
    pts = np.array([(i, j) for j in range(n + 1) for i in range(n + 1 - j)], dtype=float) / n
    pts.setflags(write=False)
    return pts


def _sample_values(space: FESpace, C, derivative: bool):
    """Values (or gradient magnitudes) on the per-element lattice, shape ``(k, ne * npts)``."""
    ref = space.reference
    pts = _lattice(max(LATTICE, space.degree))  # includes the vertices
    loc = C[:, space.elem_dofs]  # (k, ne, nl)
    if not derivative:
        return np.einsum("kel,ql->keq", loc, ref.values(pts)).reshape(len(C), -1)
    _, JinvT, _ = space.jacobians
    g = np.einsum("eij,qlj->eqli", JinvT, ref.gradients(pts))
    grad = np.einsum("kel,eqli->keqi", loc, g)
    return np.linalg.norm(grad, axis=3).reshape(len(C), -1)


def _sample_values_p1_grad(space: FESpace, C):
    _, JinvT, _ = space.jacobians
    g = np.einsum("eij,lj->eli", JinvT, space.reference.gradients(np.zeros((1, 2)))[0])
    grad = np.einsum("kel,eli->kei", C[:, space.elem_dofs], g)
    return np.linalg.norm(grad, axis=2)


def _order_for(space: FESpace, q: float, derivative: bool) -> int:
    deg = space.degree - (1 if derivative else 0)
    if float(q).is_integer() and int(q) % 2 == 0:
        return max(int(q) * deg, 1)
    return max(space.quadrature_order, int(np.ceil(q * deg)) + 2)


def space_norm(space: FESpace, coeffs, q: float = 2.0, derivative: bool = False):
    """``|u_h|_{L^q}`` or ``|grad u_h|_{L^q}``; ``coeffs`` may be stacked rows (one norm per row).

    ``q = inf`` samples a fixed barycentric lattice of each element (vertices included).
    """
    if not q > 1:
        raise ValueError("q must lie in (1, inf]")
    C = space.full(coeffs)
    single = C.ndim == 1
    C = np.atleast_2d(C)
    if np.isinf(q) and space.degree == 1:
        # piecewise linear: extrema at vertices, gradient constant per element
        if derivative:
            out = np.abs(_sample_values_p1_grad(space, C)).max(axis=1)
        else:
            out = np.abs(C).max(axis=1)
    elif np.isinf(q):
        step = max(1, 2_000_000 // (space.mesh.n_triangles * len(_lattice(LATTICE))))
        out = np.concatenate([np.abs(_sample_values(space, C[i:i + step], derivative)).max(axis=1)
                              for i in range(0, len(C), step)])
    else:
        qd = space.quadrature(_order_for(space, q, derivative))
        if derivative:
            vals = np.sqrt((qd.Bx @ C.T) ** 2 + (qd.By @ C.T) ** 2)
        else:
            vals = np.abs(qd.B @ C.T)
        out = (qd.weights @ vals**q) ** (1.0 / q)
    return float(out[0]) if single else out


def w1q_norm(space: FESpace, coeffs, q: float = 2.0):
    """``(|u|_{L^q}^q + |grad u|_{L^q}^q)^{1/q}``; for ``q = inf`` the max of the two."""
    a = np.asarray(space_norm(space, coeffs, q, False))
    b = np.asarray(space_norm(space, coeffs, q, True))
    if np.isinf(q):
        return np.maximum(a, b)
    return (a**q + b**q) ** (1.0 / q)


def time_norm(values, times, p: float) -> float:
    """``L^p(0,T)`` norm of sampled scalar values by the trapezoid rule (max for ``p = inf``)."""
    values = np.asarray(values, dtype=float)
    if np.isinf(p):
        return float(values.max())
    if len(values) < 2:
        raise ValueError("a finite time exponent needs at least two snapshots")
    return float((trapezoid_weights(times) @ values**p) ** (1.0 / p))


def bochner_norm(field: BochnerField, spec: NormSpec, space: FESpace) -> float:
    if spec.derivative == "gradient":
        vals = w1q_norm(space, field.snapshots, spec.q)
    else:
        vals = space_norm(space, field.snapshots, spec.q)
    return time_norm(np.atleast_1d(vals), field.time_grid, spec.p)


def linf_stability_constant(spec: SpectralDecomposition, space: FESpace, samples, grid) -> float:
    """``max (|E_h(t) v|_inf + t |d/dt E_h(t) v|_inf) / |v|_inf`` over samples and grid times."""
    grid = np.asarray(grid, dtype=float)
    best = 0.0
    for v in samples:
        v = np.asarray(v, dtype=float)
        vn = space_norm(space, v, np.inf)
        if vn == 0:
            raise ValueError("zero sample vector")
        u = space_norm(space, propagate(spec, v, grid, 0), np.inf)
        ut = space_norm(space, propagate(spec, v, grid, 1), np.inf)
        best = max(best, float(np.max((u + grid * ut) / vn)))
    return best
