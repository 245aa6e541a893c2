"""Quadrature on the reference triangle and graded time grids."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def triangle_rule(order: int):
    """Collapsed Gauss rule on the triangle (0,0), (1,0), (0,1).

    Exact for polynomials of total degree ``order``. Points are strictly
    interior and weights positive; weights sum to 1/2.

    Returns
    -------
    points : (n, 2) array
    weights : (n,) array
    """
    if order < 0:
        raise ValueError("quadrature order must be nonnegative")
    n = order // 2 + 1
    gx, wx = np.polynomial.legendre.leggauss(n)
    # weight (1 - v) is absorbed into a Gauss-Jacobi rule in the collapsed direction
    gy, wy = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (gx + 1.0)
    v = 0.5 * (gy + 1.0)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(0.5 * wx, 0.25 * wy)
    pts = np.column_stack([(U * (1.0 - V)).ravel(), V.ravel()])
    w = W.ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def graded_grid(T: float, n: int, grading: float = 2.0) -> np.ndarray:
    """Times ``T (i/n)**grading`` for ``i = 0..n``, clustered at ``t = 0``."""
    if n < 1:
        raise ValueError("a time grid needs at least one interval")
    if grading < 1:
        raise ValueError("grading exponent must be >= 1")
    return T * (np.arange(n + 1) / n) ** grading


def trapezoid_weights(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w
