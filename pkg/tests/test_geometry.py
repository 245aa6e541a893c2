import io
import math

import numpy as np
import pytest

from maxreg_fem.geometry import (DomainError, GeometryError, Mesh, Polygon, barycentric, build_polygon_mesh,
                                 domain_metrics, locate_point, measure_quality, read_mesh, refine_uniform,
                                 unit_square_mesh, write_mesh)


def test_unit_square_half():
    m = build_polygon_mesh(Polygon.unit_square(), 0.5)
    assert m.n_triangles == 8
    assert m.h == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    m.validate()


def test_unit_square_eighth_congruent():
    m = build_polygon_mesh(Polygon.unit_square(), 1 / 8)
    assert m.n_triangles == 128
    _, diam, inr = m._geometry
    K = diam / inr
    assert np.ptp(K) < 1e-12
    assert measure_quality(m).K == pytest.approx(2 + 2 * math.sqrt(2), rel=1e-12)


def test_hexagon_quality_against_square():
    hexagon = build_polygon_mesh(Polygon.regular(6), 0.25)
    hexagon.validate()
    square = build_polygon_mesh(Polygon.unit_square(), 0.25)
    assert measure_quality(hexagon).K <= 2 * measure_quality(square).K


def test_refine_two_triangle_square():
    m0 = build_polygon_mesh(Polygon.unit_square(), 1.0)
    assert m0.n_triangles == 2
    m1 = refine_uniform(m0)
    assert m1.n_triangles == 8
    assert m1.h == pytest.approx(m0.h / 2, rel=1e-15)
    m2 = refine_uniform(m1)
    assert m2.n_triangles == 32
    assert list(m2.ancestors()) == [m1, m0]
    assert np.array_equal(m2.ancestor_element(m0), np.repeat(np.arange(2), 16))
    for m in (m1, m2):
        m.validate()
        assert measure_quality(m).K == pytest.approx(measure_quality(m0).K, rel=1e-12)


@pytest.mark.parametrize("poly", [Polygon.regular(5), Polygon([[0, 0], [2, 0], [2.5, 1], [0.3, 1.2]]),
                                  Polygon([[0, 0], [1, 0], [0.2, 0.9]])])
def test_refinement_keeps_quality(poly):
    target = poly.edge_lengths.min() / 2
    m = build_polygon_mesh(poly, target)
    m.validate()
    r = refine_uniform(m)
    r.validate()
    assert measure_quality(r).K == pytest.approx(measure_quality(m).K, rel=1e-12)
    assert np.isclose(r.areas.sum(), poly.area, rtol=1e-12)


def test_single_triangle_quality():
    tri = Polygon([[0, 0], [1, 0], [0, 1]])
    m = Mesh(tri.vertices, np.array([[0, 1, 2]]), np.ones(3, bool), tri)
    q = measure_quality(m)
    assert q.h == pytest.approx(math.sqrt(2), abs=1e-15)
    assert q.rho_min == pytest.approx((2 - math.sqrt(2)) / 2, abs=1e-15)
    assert q.K >= 1


def test_rejects_nonconvex_with_vertex():
    with pytest.raises(GeometryError, match="vertex 2"):
        Polygon([[0, 0], [2, 0], [1, 0.2], [1, 2]])


@pytest.mark.parametrize("target", [0.0, -1.0, float("nan"), float("inf"), 1.5])
def test_rejects_bad_target(target):
    with pytest.raises(GeometryError):
        build_polygon_mesh(Polygon.unit_square(), target)


def test_locate_centroid():
    m = unit_square_mesh(4)
    c = m.vertices[m.triangles[5]].mean(axis=0)
    e, b = locate_point(m, c)
    assert e == 5
    assert np.allclose(b, 1 / 3, atol=1e-14)


def test_locate_shared_edge_lowest_index():
    m = unit_square_mesh(4)
    edges, tri_edges, counts = m.edge_data
    k = int(np.nonzero(counts == 2)[0][3])
    mid = m.vertices[edges[k]].mean(axis=0)
    owners = np.nonzero((tri_edges == k).any(axis=1))[0]
    e, b = locate_point(m, mid)
    assert e == owners.min()
    assert np.all(b >= 0) and b.sum() == pytest.approx(1.0, abs=1e-15)


def test_locate_reproduces_affine(rng):
    m = unit_square_mesh(8)
    pts = rng.uniform(0, 1, (200, 2))
    e, b = locate_point(m, pts)
    f = lambda p: 0.3 + 2.0 * p[..., 0] - 1.5 * p[..., 1]
    vals = np.einsum("ij,ij->i", b, f(m.vertices[m.triangles[e]]))
    assert np.abs(vals - f(pts)).max() < 1e-12


def test_locate_outside_raises():
    with pytest.raises(DomainError):
        locate_point(unit_square_mesh(4), np.array([1.1, 0.5]))


def test_domain_metrics_square():
    met = domain_metrics(Polygon.unit_square())
    assert met.R0 == pytest.approx(1.0)
    assert met.K0 >= max(1.0, met.R0)
    assert met.d(1) == pytest.approx(2.0**-4 * met.R0 / met.K0**2)


def test_domain_metrics_equilateral():
    tri = Polygon([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
    assert domain_metrics(tri).R0 == pytest.approx(math.sqrt(3) / 2, rel=1e-14)


def test_mesh_round_trip_bit_exact():
    m = build_polygon_mesh(Polygon.regular(7, 1.3, (0.1, -0.2)), 0.3)
    buf = io.StringIO()
    write_mesh(m, buf)
    buf.seek(0)
    r = read_mesh(buf, m.polygon)
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.boundary, m.boundary)
    buf2 = io.StringIO()
    write_mesh(r, buf2)
    assert buf2.getvalue() == buf.getvalue()


def test_nested_children_inside_parent():
    m = refine_uniform(unit_square_mesh(2))
    pts = m.vertices[m.triangles].reshape(-1, 2)
    _, b = barycentric(m.parent, np.repeat(m.parent_element, 3), pts)
    assert b.min() > -1e-12
