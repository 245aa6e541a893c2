"""Semidiscrete propagation ``E_h(t) = exp(-t A_h)`` and Duhamel solves.

The primary path diagonalizes the pencil ``(A, M)`` densely; ``theta_step_solve``
is the fallback for spaces beyond the dense cap.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .fespace import OperatorPair

DENSE_CAP = 6000


class DenseCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """``A v_k = lambda_k M v_k`` with ``V^T M V = I``; columns of ``eigenvectors`` are ``v_k``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    cholesky_M: np.ndarray
    pair: OperatorPair

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def modal(self, v) -> np.ndarray:
        """Coordinates ``v^T M v_k`` of interior vector(s) ``v`` (last axis)."""
        return np.asarray(v) @ self._MV

    @cached_property
    def _MV(self):
        return np.asarray(self.pair.M @ self.eigenvectors)

    def load_modal(self, b) -> np.ndarray:
        """Coordinates of ``M^{-1} b`` for load vector(s) ``b``."""
        return np.asarray(b) @ self.eigenvectors

    def synthesize(self, coeffs) -> np.ndarray:
        return np.asarray(coeffs) @ self.eigenvectors.T

    def residuals(self):
        """Relative eigen-residual and M-orthonormality defect."""
        M, A, V, lam = self.pair.M, self.pair.A, self.eigenvectors, self.eigenvalues
        R = A @ V - (M @ V) * lam
        rel = np.linalg.norm(R, axis=0) / np.maximum(np.linalg.norm(A @ V, axis=0), 1e-300)
        G = V.T @ (M @ V)
        return float(rel.max()), float(np.abs(G - np.eye(self.n)).max())


def spectral_decompose(pair: OperatorPair, cap: int = DENSE_CAP) -> SpectralDecomposition:
    n = pair.M.shape[0]
    if n > cap:
        raise DenseCapExceeded(f"{n} interior dofs exceed the dense cap {cap}; use theta_step_solve")
    M = pair.M.toarray()
    A = pair.A.toarray()
    L = np.linalg.cholesky(M)
    # C = L^{-1} A L^{-T}
    C = sla.solve_triangular(L, sla.solve_triangular(L, A, lower=True).T, lower=True)
    C = 0.5 * (C + C.T)
    lam, W = np.linalg.eigh(C)
    V = sla.solve_triangular(L.T, W, lower=False)
    if lam[0] <= 0:
        raise ArithmeticError(f"nonpositive first eigenvalue {lam[0]}")
    for arr in (lam, V, L):
        arr.setflags(write=False)
    return SpectralDecomposition(lam, V, L, pair)


def _decay(spec: SpectralDecomposition, t, order: int):
    lam = spec.eigenvalues
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("times must be nonnegative")
    if order not in (0, 1, 2):
        raise ValueError("derivative order must be 0, 1 or 2")
    return (-lam) ** order * np.exp(-np.outer(t, lam))


def semigroup_apply(spec: SpectralDecomposition, t: float, v, order: int = 0) -> np.ndarray:
    """``d^l/dt^l E_h(t) v``; exact identity for ``t = 0, l = 0``."""
    v = np.asarray(v, dtype=float)
    if t == 0 and order == 0:
        return v.copy()
    return spec.synthesize(_decay(spec, t, order)[0] * spec.modal(v))


def propagate(spec: SpectralDecomposition, v, times, order: int = 0) -> np.ndarray:
    """Snapshots ``d^l/dt^l E_h(t_i) v`` stacked as rows."""
    return spec.synthesize(_decay(spec, times, order) * spec.modal(v))


@dataclass(eq=False)
class BochnerField:
    """Dof snapshots ``u(t_i)`` on a time grid (rows of ``snapshots``)."""

    time_grid: np.ndarray
    snapshots: np.ndarray
    grading: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.time_grid = np.asarray(self.time_grid, dtype=float)
        self.snapshots = np.atleast_2d(np.asarray(self.snapshots, dtype=float))
        if len(self.time_grid) == 0:
            raise ValueError("empty time grid")
        if np.any(np.diff(self.time_grid) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if len(self.snapshots) != len(self.time_grid):
            raise ValueError("snapshot count differs from grid length")
        if self.grading < 1:
            raise ValueError("grading exponent must be >= 1")

    @property
    def T(self) -> float:
        return float(self.time_grid[-1])

    def export(self, path_txt, path_json) -> None:
        with open(path_txt, "w") as fh:
            for t, u in zip(self.time_grid, self.snapshots):
                fh.write(f"t= {float(t)!r}\n")
                fh.write(" ".join(repr(float(x)) for x in u) + "\n")
        with open(path_json, "w") as fh:
            json.dump({"grading": self.grading, "times": [float(t) for t in self.time_grid]}, fh, indent=1)


def phi1(z):
    """``(1 - exp(-z)) / z`` with value 1 at 0."""
    z = np.asarray(z, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = -np.expm1(-z) / z
    return np.where(z == 0, 1.0, out)


def phi2(z):
    """``(z - 1 + exp(-z)) / z**2``, by series near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-2
    zs = np.where(small, z, 0.0)
    series = 0.5 - zs / 6 + zs**2 / 24 - zs**3 / 120 + zs**4 / 720 - zs**5 / 5040
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        direct = (z + np.expm1(-z)) / z**2
    return np.where(small, series, direct)


LoadSpec = Union[Callable[[float], np.ndarray], np.ndarray]


def _load_on_grid(f: LoadSpec, grid, n) -> np.ndarray:
    if callable(f):
        return np.array([np.asarray(f(float(t)), dtype=float) for t in grid]).reshape(len(grid), n)
    F = np.asarray(f, dtype=float)
    if F.ndim == 1:
        F = np.broadcast_to(F, (len(grid), n))
    if F.shape != (len(grid), n):
        raise ValueError(f"load array shape {F.shape} does not match grid/dofs {(len(grid), n)}")
    return F


@dataclass(frozen=True, eq=False)
class ModalSolution:
    """Modal coordinates of a Duhamel solution and its load on the grid."""

    times: np.ndarray
    u: np.ndarray  # (nt, n) modal coefficients of u_h
    f: np.ndarray  # (nt, n) modal coefficients of M^{-1} f

    def time_derivative(self, lam) -> np.ndarray:
        return self.f - lam * self.u

    def operator(self, lam) -> np.ndarray:
        return lam * self.u


def duhamel_modal(spec: SpectralDecomposition, f: LoadSpec, grid, u0=None) -> ModalSolution:
    """Exact per-mode integration of ``u' + lambda u = f_k`` with ``f`` piecewise linear in ``t``.

    ``f`` is a load vector (``M``-weighted, interior dofs) given as a callable
    of ``t`` or as an array on the grid.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty time grid")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    lam = spec.eigenvalues
    fh = spec.load_modal(_load_on_grid(f, grid, spec.n))
    u = np.zeros((len(grid), spec.n))
    if u0 is not None:
        u[0] = spec.modal(u0)
    for i in range(len(grid) - 1):
        tau = grid[i + 1] - grid[i]
        z = lam * tau
        u[i + 1] = np.exp(-z) * u[i] + tau * (fh[i] * phi1(z) + (fh[i + 1] - fh[i]) * phi2(z))
    return ModalSolution(grid, u, fh)


def duhamel_solve(spec: SpectralDecomposition, f: LoadSpec, grid, u0=None, grading: float = 1.0) -> BochnerField:
    sol = duhamel_modal(spec, f, grid, u0)
    return BochnerField(sol.times, spec.synthesize(sol.u), grading, {"method": "spectral"})


def _theta_run(pair: OperatorPair, F, dt, theta, u0):
    M, A = pair.M, pair.A
    lhs = spla.factorized((M + theta * dt * A).tocsc())
    rhs_op = (M - (1 - theta) * dt * A).tocsr()
    U = np.zeros_like(F)
    U[0] = u0
    for i in range(len(F) - 1):
        U[i + 1] = lhs(rhs_op @ U[i] + dt * (theta * F[i + 1] + (1 - theta) * F[i]))
    return U


def theta_step_solve(pair: OperatorPair, f: LoadSpec, dt: float, T: float, theta: float = 0.5,
                     u0=None) -> BochnerField:
    """Crank-Nicolson (``theta = 1/2``) or backward Euler (``theta = 1``) on a uniform grid.

    ``meta['error_indicator']`` is the Richardson estimate from a ``dt`` vs ``dt/2`` run,
    measured in the max norm over the common grid.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if theta not in (0.5, 1.0):
        raise ValueError("theta must be 1/2 or 1")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * T:
        raise ValueError("T must be a multiple of dt")
    n = pair.M.shape[0]
    u0 = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float)
    grid = dt * np.arange(n_steps + 1)
    fine = 0.5 * dt * np.arange(2 * n_steps + 1)
    U = _theta_run(pair, _load_on_grid(f, grid, n), dt, theta, u0)
    U2 = _theta_run(pair, _load_on_grid(f, fine, n), dt / 2, theta, u0)
    order = 2 if theta == 0.5 else 1
    indicator = float(np.abs(U2[::2] - U).max() / (2**order - 1))
    return BochnerField(grid, U, 1.0, {"method": f"theta={theta}", "dt": dt, "error_indicator": indicator})
