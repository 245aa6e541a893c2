import math

import numpy as np
import pytest

from maxreg_fem.coefficients import make_sample
from maxreg_fem.evolution import spectral_decompose
from maxreg_fem.fespace import assemble, build_space
from maxreg_fem.geometry import DomainMetrics, GeometryError, Polygon, build_polygon_mesh, domain_metrics
from maxreg_fem.greens import (GreenDifference, NodalInterpolant, discrete_green, dyadic_decomposition,
                               eigen_kernel, gaussian_tail_fit, green_error_functional, heat_kernel_square,
                               kappa_functional, l1_profile, local_energy_ratio, reference_green, shell_sums)
from maxreg_fem.projections import discrete_delta
from maxreg_fem.quadrature import graded_grid

from conftest import ROUGH

X0 = (5 / 12, 11 / 24)
GRID = graded_grid(1.0, 60, 2.0)
UNIT = DomainMetrics(1.0, 1.0, math.pi / 2)


@pytest.fixture(scope="module")
def fields(square_family):
    out = {}
    for name, params in (("identity", None), ("rough_isotropic", ROUGH)):
        a = make_sample(name, params)
        sp = {}
        for n in (8, 32):
            s = build_space(square_family[n], 1)
            p = assemble(s, a)
            sp[n] = (s, p, spectral_decompose(p))
        coarse = discrete_green(sp[8][0], sp[8][2], X0, GRID)
        fine = reference_green(sp[32][0], sp[32][2], coarse, GRID)
        out[name] = (sp, coarse, fine)
    return out


def test_initial_is_discrete_delta(fields):
    sp, coarse, fine = fields["identity"]
    s, p, _ = sp[8]
    c, _ = discrete_delta(s, p, X0)
    assert np.abs(coarse.field.snapshots[0] - c).max() <= 1e-11 * np.abs(c).max()
    assert fine.meta["nesting_levels"] == 2 and not fine.meta["shallow_nesting"]


def test_eigen_kernel_symmetric(fields):
    _, _, spec = fields["rough_isotropic"][0][8]
    pts = np.random.default_rng(0).uniform(0.05, 0.95, (30, 2))
    K = eigen_kernel(spec, 0.01, pts, pts)
    assert np.abs(K - K.T).max() <= 1e-11 * np.abs(K).max()


def test_heat_kernel_oracle(fields):
    s, _, spec = fields["identity"][0][32]
    g = discrete_green(s, spec, (0.5, 0.5), np.array([0.0, 0.05]))
    G = heat_kernel_square(0.05, s.dof_coords[s.interior], np.array([[0.5, 0.5]]), n_images=10)[:, 0]
    assert np.abs(g.field.snapshots[1] - G).max() <= 0.05 * G.max()


def test_heat_kernel_images_vanish_on_boundary():
    y = np.array([[0.3, 0.6]])
    edge = np.array([[0.0, 0.4], [1.0, 0.2], [0.7, 0.0], [0.5, 1.0]])
    assert np.abs(heat_kernel_square(0.1, edge, y)).max() < 1e-14


def test_degenerate_reference_gives_zero(fields):
    sp, coarse, _ = fields["identity"]
    same = reference_green(sp[8][0], sp[8][2], coarse, GRID)
    diff = GreenDifference(coarse, same)
    for rows in diff.chunks():
        v, (gx, gy) = diff.evaluate(1, rows, gradient=True)
        assert np.abs(v).max() < 1e-10 and np.abs(gx).max() < 1e-9
    assert green_error_functional(coarse, same) == pytest.approx((0, 0), abs=1e-8)


def test_reference_rejects_non_nested(fields):
    _, coarse, _ = fields["identity"]
    other = build_space(build_polygon_mesh(Polygon.unit_square(), 1 / 8), 1)
    spec = spectral_decompose(assemble(other, make_sample("identity")))
    with pytest.raises(GeometryError):
        reference_green(other, spec, coarse, GRID)


def test_l1_bounded(fields):
    for name in fields:
        prof = l1_profile(fields[name][2])
        assert np.all(np.isfinite(prof)) and prof.max() <= 2.0  # recorded constant


def test_gaussian_tail_reported(fields):
    fit = gaussian_tail_fit(fields["identity"][2], fields["identity"][0][8][0].mesh.h)
    assert fit.n_points > 0 and math.isfinite(fit.C) and fit.C > 0
    assert math.isfinite(fit.residual)


@pytest.mark.parametrize("name", ["identity", "rough_isotropic"])
def test_error_functional_sign_symmetric(fields, name):
    _, coarse, fine = fields[name]
    I = green_error_functional(coarse, fine)
    J = green_error_functional(fine, coarse)
    assert I == pytest.approx(J, rel=1e-12)
    assert all(math.isfinite(v) and v > 0 for v in I)


def test_error_functional_grid_mismatch(fields):
    sp, coarse, _ = fields["identity"]
    other = reference_green(sp[32][0], sp[32][2], coarse, graded_grid(1.0, 30, 2.0))
    with pytest.raises(ValueError):
        green_error_functional(coarse, other)


def test_dyadic_unit_constants():
    dec = dyadic_decomposition(UNIT, X0, 1 / 64, C_star=1.0)
    assert dec.d(1) == 1 / 16
    d = dec.d_list
    assert np.all(d[1:] / d[:-1] == 0.5)
    assert dec.C_star * dec.h <= d[-1] < 2 * dec.C_star * dec.h
    assert dec.J_star <= math.log2(2 + 1 / dec.h)


@pytest.mark.parametrize("h", [1 / 8, 1 / 32, 1 / 200, 1e-3])
def test_dyadic_step_relation(h):
    dec = dyadic_decomposition(domain_metrics(Polygon.unit_square()), X0, h, C_star=0.05)
    if dec.trivial:
        assert dec.J_star == 0
    else:
        assert dec.C_star * h <= dec.d(dec.J_star) < 2 * dec.C_star * h
        assert dec.J_star <= math.log2(2 + 1 / h)


def test_dyadic_trivial_branch():
    dec = dyadic_decomposition(UNIT, X0, 0.2, C_star=10)
    assert dec.trivial and dec.J_star == 0
    assert np.all(dec.index(np.array([0.0, 0.1, 5.0])) == 0)


def test_shells_partition(fields):
    _, coarse, fine = fields["identity"]
    diff = GreenDifference(coarse, fine)
    dec = dyadic_decomposition(UNIT, X0, coarse.space.mesh.h, C_star=0.05)
    assert not dec.trivial
    s = shell_sums(diff, dec)
    assert s["points"].sum() == len(GRID) * len(diff.qd.weights)
    # membership matches the defining inequalities
    rho = np.array([0.3, 0.125, 0.1, 1 / 16 + 1e-9, 1 / 16, 0.04, 1e-4])
    idx = dec.index(rho)
    for r, j in zip(rho, idx):
        if j == 0:
            assert r > dec.d(1) * 2 - 1e-15
        elif j > 0:
            assert dec.d(j) < r <= 2 * dec.d(j)
        else:
            assert r <= dec.d(dec.J_star)


def test_kappa_zero_and_profile(fields):
    sp, coarse, fine = fields["identity"]
    dec = dyadic_decomposition(UNIT, X0, coarse.space.mesh.h, C_star=0.05)
    same = reference_green(sp[8][0], sp[8][2], coarse, GRID)
    assert kappa_functional(GreenDifference(coarse, same), dec).total < 1e-8
    rep = kappa_functional(GreenDifference(coarse, fine), dec)
    assert rep.total == pytest.approx(sum(rep.contributions), rel=1e-14)
    c = np.array(rep.contributions)
    assert np.all(np.diff(c[2:]) <= 0)


def test_local_energy(fields):
    sp, coarse, fine = fields["identity"]
    h = coarse.space.mesh.h
    dec = dyadic_decomposition(UNIT, X0, h, C_star=0.05)
    diff = GreenDifference(coarse, fine)
    interp = GreenDifference(NodalInterpolant(fine, coarse.space), fine)
    reps = [local_energy_ratio(diff, interp, dec, j, h) for j in range(1, dec.J_star + 1)]
    for r in reps:
        assert r.lhs > 0 and math.isfinite(r.ratio)
        assert r.rhs == pytest.approx(r.I + r.X + r.H + r.tail)
        assert r.m == 5
    with pytest.raises(ValueError):
        local_energy_ratio(diff, interp, dec, 0, h)
    with pytest.raises(ValueError):
        local_energy_ratio(diff, interp, dec, dec.J_star + 1, h)
    same = reference_green(sp[8][0], sp[8][2], coarse, GRID)
    zero = GreenDifference(coarse, same)
    assert local_energy_ratio(zero, interp, dec, 1, h).lhs < 1e-8
