import json
import math

import numpy as np
import pytest

from maxreg_fem.coefficients import make_sample
from maxreg_fem.evolution import (BochnerField, DenseCapExceeded, duhamel_modal, duhamel_solve, phi1, phi2,
                                  propagate, semigroup_apply, spectral_decompose, theta_step_solve)
from maxreg_fem.fespace import assemble, build_space
from maxreg_fem.geometry import unit_square_mesh
from maxreg_fem.quadrature import graded_grid


def test_first_eigenvalue_within_five_percent(p1_identity):
    # the n = 8 diagonal grid is the coarsest with element diameter <= 1/4
    s, _, spec = p1_identity
    assert s.mesh.h <= 0.25
    lam1 = spec.eigenvalues[0]
    assert 2 * math.pi**2 < lam1 < 1.05 * 2 * math.pi**2


def test_eigen_invariants(p1_identity):
    _, _, spec = p1_identity
    res, orth = spec.residuals()
    assert res <= 1e-10 and orth <= 1e-10
    assert np.all(np.diff(spec.eigenvalues) >= 0) and spec.eigenvalues[0] > 0


def test_eigenvalues_scale(square_family):
    s = build_space(square_family[4], 2)
    l1 = spectral_decompose(assemble(s, make_sample("identity"))).eigenvalues
    lc = spectral_decompose(assemble(s, make_sample("scaled", {"c": 2.5}))).eigenvalues
    assert np.abs(lc / l1 - 2.5).max() <= 2.5e-11


def test_dense_cap(p1_identity):
    _, pair, _ = p1_identity
    with pytest.raises(DenseCapExceeded, match="theta_step_solve"):
        spectral_decompose(pair, cap=10)


def test_semigroup_identity_and_diagonal(p1_identity, rng):
    _, _, spec = p1_identity
    v = rng.standard_normal(spec.n)
    assert np.array_equal(semigroup_apply(spec, 0.0, v), v)
    v1 = spec.eigenvectors[:, 0]
    for t in (0.01, 0.1):
        assert np.allclose(semigroup_apply(spec, t, v1), math.exp(-spec.eigenvalues[0] * t) * v1, atol=1e-12)


@pytest.mark.parametrize("order", [1, 2])
def test_semigroup_finite_difference(p1_identity, rng, order):
    _, _, spec = p1_identity
    v = rng.standard_normal(spec.n)
    t, eps = 0.05, 1e-5
    fd = (semigroup_apply(spec, t + eps, v, order - 1) - semigroup_apply(spec, t - eps, v, order - 1)) / (2 * eps)
    exact = semigroup_apply(spec, t, v, order)
    assert np.linalg.norm(fd - exact) <= 1e-6 * np.linalg.norm(exact)


def test_semigroup_property_and_energy_decay(p1_identity, rng):
    _, pair, spec = p1_identity
    v = rng.standard_normal(spec.n)
    a = semigroup_apply(spec, 0.03, semigroup_apply(spec, 0.02, v))
    b = semigroup_apply(spec, 0.05, v)
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)
    U = propagate(spec, v, graded_grid(1.0, 60, 2.0))
    energy = np.einsum("ti,ij,tj->t", U, pair.M.toarray(), U)
    assert np.all(np.diff(energy) <= 1e-14 * energy[0])


def test_duhamel_single_mode(p1_identity):
    _, pair, spec = p1_identity
    v1 = spec.eigenvectors[:, 0]
    lam = spec.eigenvalues[0]
    grid = graded_grid(0.5, 40, 2.0)
    u = duhamel_solve(spec, pair.M @ v1, grid)
    exact = np.outer(-np.expm1(-lam * grid) / lam, v1)
    assert np.abs(u.snapshots - exact).max() < 1e-13
    assert np.all(duhamel_solve(spec, np.zeros(spec.n), grid).snapshots == 0)


def test_duhamel_steady_state(p1_identity, rng):
    _, pair, spec = p1_identity
    f = rng.standard_normal(spec.n)
    T = 40 / spec.eigenvalues[0]
    u = duhamel_solve(spec, f, np.linspace(0, T, 50))
    assert np.linalg.norm(pair.A @ u.snapshots[-1] - f) <= 1e-8 * np.linalg.norm(f)


def test_duhamel_linear_load_exact(p1_identity, rng):
    # u' + lam u = t b has closed form; piecewise-linear interpolation is then exact
    _, pair, spec = p1_identity
    b = rng.standard_normal(spec.n)
    grid = graded_grid(0.3, 17, 2.0)
    u = duhamel_modal(spec, lambda t: t * (pair.M @ b), grid)
    lam = spec.eigenvalues
    bk = spec.modal(b)
    t = grid[:, None]
    exact = bk * (t / lam - (1 - np.exp(-lam * t)) / lam**2)
    assert np.abs(u.u - exact).max() <= 1e-12 * np.abs(exact).max()


def test_duhamel_rejects_empty(p1_identity):
    with pytest.raises(ValueError):
        duhamel_solve(p1_identity[2], np.zeros(p1_identity[2].n), [])


def test_phi_series_continuity():
    z = np.array([0.0, 1e-9, 0.00999999, 0.01, 0.5, 50.0])
    assert np.allclose(phi1(z), np.where(z == 0, 1, -np.expm1(-z) / np.where(z == 0, 1, z)))
    assert phi2(0.0) == 0.5
    assert abs(phi2(0.00999999) - phi2(0.01)) < 1e-8
    assert phi2(50.0) == pytest.approx((50 - 1 + math.exp(-50)) / 2500, rel=1e-14)


def test_per_mode_maximal_regularity(p1_identity, rng):
    _, pair, spec = p1_identity
    grid = np.linspace(0, 0.5, 401)
    b = rng.standard_normal(spec.n)
    sol = duhamel_modal(spec, lambda t: np.sin(20 * t) * (pair.M @ b), grid)
    w = np.full(len(grid), grid[1])
    w[[0, -1]] *= 0.5
    lhs = w @ sol.operator(spec.eigenvalues) ** 2
    rhs = w @ sol.f**2
    assert np.all(lhs <= rhs * (1 + 1e-3))


def test_crank_nicolson_second_order(p1_identity, rng):
    _, pair, spec = p1_identity
    b = rng.standard_normal(spec.n)
    f = lambda t: math.cos(3 * t) * b
    T = 0.5
    errs = []
    for dt in (0.01, 0.005, 0.0025):
        fine = np.linspace(0, T, int(round(T / dt)) * 8 + 1)
        ref = duhamel_solve(spec, f, fine).snapshots[-1]
        cn = theta_step_solve(pair, f, dt, T).snapshots[-1]
        errs.append(np.linalg.norm(cn - ref))
    for e0, e1 in zip(errs, errs[1:]):
        assert 4 * 0.8 <= e0 / e1 <= 4 * 1.2


def test_backward_euler_recurrence(p1_identity):
    _, pair, spec = p1_identity
    v1 = spec.eigenvectors[:, 0]
    dt, n = 0.01, 20
    u = theta_step_solve(pair, np.zeros(spec.n), dt, n * dt, theta=1.0, u0=v1)
    expected = (1 + spec.eigenvalues[0] * dt) ** -np.arange(n + 1)
    assert np.allclose(u.snapshots, np.outer(expected, v1), atol=1e-12)
    assert u.meta["error_indicator"] >= 0


def test_backward_euler_first_order(p1_identity, rng):
    _, pair, spec = p1_identity
    b = rng.standard_normal(spec.n)
    f = lambda t: (1 + t) * b
    T = 0.2
    ref = duhamel_solve(spec, f, np.linspace(0, T, 3)).snapshots[-1]  # linear load: exact
    errs = [np.linalg.norm(theta_step_solve(pair, f, dt, T, theta=1.0).snapshots[-1] - ref)
            for dt in (0.01, 0.005, 0.0025)]
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 0.9)


def test_bochner_field_validation(tmp_path):
    with pytest.raises(ValueError):
        BochnerField([0.0, 0.0], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        BochnerField([0.0, 1.0], np.zeros((3, 3)))
    bf = BochnerField([0.0, 0.5, 1.0], np.arange(9.0).reshape(3, 3), 2.0)
    bf.export(tmp_path / "u.txt", tmp_path / "u.json")
    lines = (tmp_path / "u.txt").read_text().splitlines()
    assert lines[0] == "t= 0.0" and lines[1].split() == ["0.0", "1.0", "2.0"]
    assert json.loads((tmp_path / "u.json").read_text())["times"] == [0.0, 0.5, 1.0]
