import math

import numpy as np
import pytest

from maxreg_fem.coefficients import make_sample
from maxreg_fem.fespace import assemble, build_space
from maxreg_fem.projections import (ProjectionError, RadialCutoff, SuperapproxHypothesisError, clement_interpolate,
                                    clement_patch_constant, delta_load, discrete_delta, fe_function,
                                    l2_project, lagrange_interpolate, regularized_delta, ritz_load, ritz_project,
                                    superapprox_check)

from conftest import ROUGH

X0 = (5 / 12, 11 / 24)  # centroid of a coarse triangle; same relative position on every refinement


def sinsin(p):
    return np.sin(np.pi * p[..., 0]) * np.sin(np.pi * p[..., 1])


def sinsin_grad(p):
    x, y = np.pi * p[..., 0], np.pi * p[..., 1]
    return np.pi * np.column_stack([np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)])


def errors(space, c, f, grad):
    qd = space.quadrature(space.quadrature_order + 4)
    c = space.full(c)
    ev = qd.B @ c - f(qd.points)
    g = np.column_stack([qd.Bx @ c, qd.By @ c]) - grad(qd.points)
    return math.sqrt(qd.weights @ ev**2), math.sqrt(qd.weights @ (g**2).sum(axis=1))


def slopes(hs, es):
    return np.diff(np.log(es)) / np.diff(np.log(hs))


def _pair(mesh, r, coeff="identity", params=None):
    s = build_space(mesh, r)
    return s, assemble(s, make_sample(coeff, params))


@pytest.mark.parametrize("r", [1, 2])
def test_l2_project_fixes_subspace(square_family, rng, r):
    s, p = _pair(square_family[8], r)
    c = rng.standard_normal(s.n_interior)
    value, _ = fe_function(s, c)
    assert np.abs(l2_project(s, p, value) - c).max() < 1e-12
    assert np.all(l2_project(s, p, lambda x: np.zeros(len(x))) == 0)


def test_l2_project_self_adjoint(p2_rough):
    s, p = p2_rough
    f = lambda x: np.exp(x[:, 0]) * np.cos(3 * x[:, 1])
    c = l2_project(s, p, f, 12)
    from maxreg_fem.projections import load_vector
    assert np.abs(p.M @ c - load_vector(s, f, 12)).max() < 1e-12


def test_l2_project_order_two(square_family):
    hs, es = [], []
    for n in (8, 16, 32):
        s, p = _pair(square_family[n], 1)
        es.append(errors(s, l2_project(s, p, sinsin), sinsin, sinsin_grad)[0])
        hs.append(square_family[n].h)
    assert np.all(slopes(hs, es) > 1.9)


@pytest.mark.parametrize("coeff, params", [("identity", None), ("rough_isotropic", ROUGH)])
def test_ritz_fixes_subspace_and_orthogonality(square_family, rng, coeff, params):
    s, p = _pair(square_family[8], 2, coeff, params)
    c = rng.standard_normal(s.n_interior)
    value, grad = fe_function(s, c)
    assert np.abs(ritz_project(s, p, value, grad) - c).max() < 1e-11
    R = ritz_project(s, p, sinsin, sinsin_grad)
    # (a grad(f - R_h f), grad phi_i) for every basis function
    resid = ritz_load(s, p, sinsin_grad) - p.A @ R
    assert np.abs(resid).max() <= 1e-10 * errors(s, np.zeros(s.n_interior), sinsin, sinsin_grad)[0]


def test_ritz_h1_rate(square_family):
    hs, es = [], []
    for n in (8, 16, 32):
        s, p = _pair(square_family[n], 1)
        e0, e1 = errors(s, ritz_project(s, p, sinsin, sinsin_grad), sinsin, sinsin_grad)
        es.append(math.hypot(e0, e1))
        hs.append(square_family[n].h)
    assert np.all(slopes(hs, es) >= 0.9)


def test_ritz_scale_invariant(square_family):
    s, p1 = _pair(square_family[8], 2)
    _, pc = _pair(square_family[8], 2, "scaled", {"c": 5.0})
    assert np.abs(ritz_project(s, p1, sinsin, sinsin_grad) - ritz_project(s, pc, sinsin, sinsin_grad)).max() < 1e-11


def test_ritz_rejects_boundary_values(p1_identity):
    s, p, _ = p1_identity
    with pytest.raises(ProjectionError, match="vanish"):
        ritz_project(s, p, lambda x: 1 + 0 * x[:, 0], lambda x: np.zeros((len(x), 2)))


def test_lagrange_reproduces_bubble(square_family):
    s = build_space(square_family[4], 4)
    f = lambda p: p[..., 0] * (1 - p[..., 0]) * p[..., 1] * (1 - p[..., 1])
    value, _ = fe_function(s, lagrange_interpolate(s, f))
    pts = np.random.default_rng(3).uniform(0, 1, (400, 2))
    assert np.abs(value(pts) - f(pts)).max() < 1e-13


@pytest.mark.parametrize("r", [1, 2, 3])
def test_lagrange_fixes_subspace(square_family, rng, r):
    s = build_space(square_family[4], r)
    c = rng.standard_normal(s.n_interior)
    value, _ = fe_function(s, c)
    assert np.abs(lagrange_interpolate(s, value) - c).max() < 1e-13


@pytest.mark.parametrize("r", [1, 2])
def test_lagrange_rate(square_family, r):
    hs, es = [], []
    for n in (8, 16, 32):
        s = build_space(square_family[n], r)
        es.append(errors(s, lagrange_interpolate(s, sinsin), sinsin, sinsin_grad)[0])
        hs.append(square_family[n].h)
    assert np.all(slopes(hs, es) >= r + 0.9)


def test_clement_constant(square_family):
    s = build_space(square_family[8], 2)
    c = clement_interpolate(s, lambda p: 3.25 + 0 * p[:, 0])
    assert np.abs(c - 3.25).max() < 1e-13
    assert clement_patch_constant(s) == pytest.approx(1.0)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_regularized_delta_reproduction(square_family, r):
    s = build_space(square_family[8], r)
    d = regularized_delta(s, X0)
    b = delta_load(s, d)
    basis_at_x0 = s.restrict(s.basis_at(*s.locate(X0)).toarray()[0])
    assert np.abs(b - basis_at_x0).max() < 1e-11
    # affine function on the element is reproduced too
    f = np.full(s.n_dofs, 0.0)
    f[:] = 0.5 + s.dof_coords[:, 0] - 2 * s.dof_coords[:, 1]
    full = np.zeros(s.n_dofs)
    tri = s.elem_dofs[d.element]
    full[tri] = f[tri]
    from maxreg_fem.fespace import evaluate_field
    val = evaluate_field(s, full, np.asarray(X0))[0]
    # (delta, chi) for chi supported on tau
    order = 2 * r + 12
    qd = s.quadrature(order)
    on = qd.element == d.element
    approx = np.sum(qd.weights[on] * d(qd.points[on]) * (qd.B[on] @ full))
    assert approx == pytest.approx(val, rel=1e-11)


def test_regularized_delta_support_and_smoothness(square_family):
    s = build_space(square_family[8], 1)
    d = regularized_delta(s, X0)
    pts = np.random.default_rng(4).uniform(0, 1, (2000, 2))
    e, _ = s.locate(pts)
    assert np.all(d(pts)[e != d.element] == 0)
    # vanishes to fourth order at the element boundary
    tri = s.mesh.vertices[s.mesh.triangles[d.element]]
    mid = 0.5 * (tri[0] + tri[1])
    inward = tri[2] - mid
    eps = np.array([1e-2, 5e-3])
    v = np.abs(d(mid + eps[:, None] * inward))
    assert math.log(v[0] / v[1], 2) == pytest.approx(4, abs=0.1)


@pytest.mark.parametrize("r", [1, 2])
def test_regularized_delta_norm_scaling(square_family, r):
    norms = []
    for n in (8, 16, 32):
        d = regularized_delta(build_space(square_family[n], r), X0)
        h = square_family[n].h
        norms.append([d.lp_norm(p) * h ** (2 * (1 - 1 / p)) for p in (1, 2, np.inf)])
    norms = np.array(norms)
    assert np.allclose(norms, norms[0], rtol=1e-8)
    assert norms[0, 0] <= 1.5  # recorded L1 constant


def test_bump_power_too_low(p1_identity):
    with pytest.raises(ProjectionError):
        regularized_delta(p1_identity[0], X0, bump_power=3)


@pytest.mark.parametrize("r, baseline", [(1, 1.5), (2, 2.0)])
def test_discrete_delta(square_family, r, baseline):
    amps = []
    for n in (16, 32, 64) if r == 1 else (16, 32):
        mesh = square_family[n] if n in square_family else None
        if mesh is None:
            from maxreg_fem.geometry import refine_uniform
            mesh = refine_uniform(square_family[32])
        s, p = _pair(mesh, r)
        c, fit = discrete_delta(s, p, X0)
        basis_at_x0 = s.restrict(s.basis_at(*s.locate(X0)).toarray()[0])
        assert np.abs(p.M @ c - basis_at_x0).max() < 1e-11
        assert fit.rate >= baseline
        assert np.isfinite(fit.residual)
        amps.append(fit.amplitude * mesh.h**2)
    assert max(amps) / min(amps) <= 2


def test_cutoff_bounds():
    w = RadialCutoff((0.5, 0.5), 0.1, 0.3, 2)
    pts = np.random.default_rng(0).uniform(0, 1, (5000, 2))
    v = w(pts)
    r = np.linalg.norm(pts - 0.5, axis=1)
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(v[r <= 0.1] == 1) and np.all(v[r >= 0.3] == 0)
    eps = 1e-6
    fd = np.column_stack([(w(pts + [eps, 0]) - w(pts - [eps, 0])) / (2 * eps),
                          (w(pts + [0, eps]) - w(pts - [0, eps])) / (2 * eps)])
    assert np.abs(fd - w.gradient(pts)).max() < 1e-5


def test_superapprox_guards(square_family):
    s, p = _pair(square_family[32], 1)
    d = 10 * s.mesh.h
    rep = superapprox_check(s, p, (0.5, 0.5), 0.05, d, np.zeros(s.n_interior))
    assert rep.lhs == 0 and rep.ratio == 0
    with pytest.raises(SuperapproxHypothesisError):
        superapprox_check(s, p, (0.5, 0.5), 0.05, 5 * s.mesh.h, np.zeros(s.n_interior))


def test_superapprox_identity_cutoff(square_family):
    # psi supported deep inside D, so omega psi = psi lies in S_h
    s, p = _pair(square_family[32], 1)
    psi = np.zeros(s.n_dofs)
    psi[np.linalg.norm(s.dof_coords - 0.5, axis=1) < 0.05] = 1.0
    d = 10 * s.mesh.h
    rep = superapprox_check(s, p, (0.5, 0.5), 0.55, d, s.restrict(psi))
    assert rep.cutoff_term < 1e-12
    assert rep.ritz_term < 1e-10


def test_superapprox_bounded(square_family):
    from maxreg_fem.geometry import refine_uniform
    meshes = [square_family[32], refine_uniform(square_family[32])]
    d = 10 * square_family[32].h
    ratios = []
    for mesh in meshes:
        s, p = _pair(mesh, 1, "rough_isotropic", ROUGH)
        psi = np.random.default_rng(7).standard_normal(s.n_interior)
        ratios.append(superapprox_check(s, p, (0.5, 0.5), 0.05, d, psi).ratio)
    assert max(ratios) / min(ratios) <= 3
