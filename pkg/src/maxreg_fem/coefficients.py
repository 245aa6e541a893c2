"""Catalogue of diffusion coefficients with ellipticity certificates.

Rough members are built from ``|x - z|**beta`` with ``0 < beta < 1``. Their
gradient behaves like ``|x - z|**(beta - 1)``, which is in ``L^p`` of a 2D
domain iff ``p (1 - beta) < 2``; so ``a`` lies in ``W^{1, 2 + alpha}`` for
every ``alpha < 2 beta / (1 - beta)`` and is not ``C^1`` at ``z``.
"""
from __future__ import annotations

import numpy as np

from .fespace import CoefficientField
from .geometry import Polygon

CATALOGUE = {
    "identity": "a = I",
    "scaled": "a = c I, params: c > 0",
    "smooth_anisotropic": "a = diag(1 + x^2, 2 - y^2) on the unit square (box-certified elsewhere)",
    "lipschitz_cone": "a = (1 + |x - z|) I, params: z",
    "rough_isotropic": "a = (1 + |x - z|^beta) I, params: z, beta in (0, 1)",
    "rough_anisotropic": "a = Q(theta) diag(rho, 1) Q(theta)^T, theta = pi |x - z|^beta, params: z, beta, rho >= 1",
}


class CoefficientParameterError(ValueError):
    pass


def _eye(m):
    return np.broadcast_to(np.eye(2), (m, 2, 2)).copy()


def _max_dist(polygon: Polygon, z) -> float:
    # a convex function attains its max over a convex polygon at a vertex
    return float(np.max(np.linalg.norm(polygon.vertices - np.asarray(z, dtype=float), axis=1)))


def rough_alpha(beta: float) -> float:
    """Supremum of ``alpha`` with ``(1 - beta)(2 + alpha) < 2``."""
    return 2.0 * beta / (1.0 - beta)


def make_sample(name: str, params: dict | None = None, domain: Polygon | None = None) -> CoefficientField:
    """Build a catalogue coefficient certified on ``domain`` (default: unit square)."""
    params = dict(params or {})
    domain = Polygon.unit_square() if domain is None else domain
    if name == "identity":
        return CoefficientField(lambda p: _eye(len(p)), 1.0, "constant", {}, name,
                                gradient=lambda p: np.zeros((len(p), 2, 2, 2)))
    if name == "scaled":
        c = float(params.get("c", 1.0))
        if c <= 0:
            raise CoefficientParameterError("scale c must be positive")
        return CoefficientField(lambda p: c * _eye(len(p)), max(c, 1.0 / c), "constant", {"c": c}, name,
                                gradient=lambda p: np.zeros((len(p), 2, 2, 2)))
    if name == "smooth_anisotropic":
        lo, hi = domain.vertices.min(axis=0), domain.vertices.max(axis=0)
        x2max = max(lo[0] ** 2, hi[0] ** 2)
        y2max = max(lo[1] ** 2, hi[1] ** 2)
        if y2max >= 2:
            raise CoefficientParameterError("domain too tall for 2 - y^2 > 0")
        x2min = 0.0 if lo[0] <= 0 <= hi[0] else min(lo[0] ** 2, hi[0] ** 2)
        y2min = 0.0 if lo[1] <= 0 <= hi[1] else min(lo[1] ** 2, hi[1] ** 2)
        e_lo = min(1 + x2min, 2 - y2max)
        e_hi = max(1 + x2max, 2 - y2min)
        Lam = max(e_hi, 1.0 / e_lo)

        def ev(p):
            a = np.zeros((len(p), 2, 2))
            a[:, 0, 0] = 1 + p[:, 0] ** 2
            a[:, 1, 1] = 2 - p[:, 1] ** 2
            return a

        def grad(p):
            g = np.zeros((len(p), 2, 2, 2))
            g[:, 0, 0, 0] = 2 * p[:, 0]
            g[:, 1, 1, 1] = -2 * p[:, 1]
            return g

        return CoefficientField(ev, Lam, "lipschitz", {}, name, gradient=grad)

    z = np.asarray(params.get("z", domain.vertices.mean(axis=0)), dtype=float)
    if name == "lipschitz_cone":
        Lam = 1.0 + _max_dist(domain, z)

        def ev(p):
            return (1 + np.linalg.norm(p - z, axis=1))[:, None, None] * np.eye(2)

        def grad(p):
            d = p - z
            r = np.linalg.norm(d, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                s = np.where(r > 0, 1.0 / r, 0.0)
            return (d * s[:, None])[:, None, None, :] * np.eye(2)[None, :, :, None]

        return CoefficientField(ev, Lam, "lipschitz", {"z": z}, name, gradient=grad)

    beta = float(params.get("beta", 0.6))
    if not 0.0 < beta < 1.0:
        raise CoefficientParameterError(f"beta = {beta} outside (0, 1): not in the certified rough family")
    if name == "rough_isotropic":
        Lam = 1.0 + _max_dist(domain, z) ** beta

        def ev(p):
            return (1 + np.linalg.norm(p - z, axis=1) ** beta)[:, None, None] * np.eye(2)

        def grad(p):
            d = p - z
            r = np.linalg.norm(d, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                s = np.where(r > 0, beta * r ** (beta - 2), 0.0)
            return (d * s[:, None])[:, None, None, :] * np.eye(2)[None, :, :, None]

        return CoefficientField(ev, Lam, "w1p_rough", {"z": z, "beta": beta}, name,
                                alpha=rough_alpha(beta), gradient=grad)
    if name == "rough_anisotropic":
        rho = float(params.get("rho", 2.0))
        if rho < 1:
            raise CoefficientParameterError("anisotropy ratio rho must be >= 1")

        def ev(p):
            th = np.pi * np.linalg.norm(p - z, axis=1) ** beta
            c, s = np.cos(th), np.sin(th)
            a = np.empty((len(p), 2, 2))
            a[:, 0, 0] = rho * c * c + s * s
            a[:, 1, 1] = rho * s * s + c * c
            a[:, 0, 1] = a[:, 1, 0] = (rho - 1) * c * s
            return a

        def grad(p):
            d = p - z
            r = np.linalg.norm(d, axis=1)
            th = np.pi * r**beta
            with np.errstate(invalid="ignore", divide="ignore"):
                dth = np.where(r > 0, np.pi * beta * r ** (beta - 2), 0.0)[:, None] * d
            c2, s2 = np.cos(2 * th), np.sin(2 * th)
            da = np.empty((len(p), 2, 2))
            da[:, 0, 0] = -(rho - 1) * s2
            da[:, 1, 1] = (rho - 1) * s2
            da[:, 0, 1] = da[:, 1, 0] = (rho - 1) * c2
            return da[..., None] * dth[:, None, None, :]

        return CoefficientField(ev, rho, "w1p_rough", {"z": z, "beta": beta, "rho": rho}, name,
                                alpha=rough_alpha(beta), gradient=grad)
    raise CoefficientParameterError(f"unknown coefficient sample {name!r}; known: {sorted(CATALOGUE)}")
