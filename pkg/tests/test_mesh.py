import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chns.mesh import UNIT_SQUARE, Rect, build_rect_mesh, mesh_from_arrays, triangle_geometry


def signed_areas(mesh):
    p = mesh.vertices[mesh.triangles]
    a, b = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def test_smallest_mesh():
    m = build_rect_mesh(UNIT_SQUARE, 1, 1)
    assert (m.n_vertices, m.n_triangles, m.n_edges) == (4, 2, 5)


def test_counts_4x4():
    m = build_rect_mesh(UNIT_SQUARE, 4, 4)
    assert m.n_vertices == 25
    assert m.n_triangles == 32


def test_ellipse_domain_boundary_flags():
    dom = Rect(-0.4, 0.4, -0.4, 0.4)
    m = build_rect_mesh(dom, 64, 64)
    assert m.h == pytest.approx(math.sqrt(2) * 0.8 / 64, rel=1e-14)
    assert m.h == pytest.approx(0.01768, abs=1e-5)
    # enumeration oracle straight from the coordinates
    x, y = m.vertices.T
    on_side = np.isclose(np.abs(x), 0.4, atol=1e-12, rtol=0) | np.isclose(np.abs(y), 0.4, atol=1e-12, rtol=0)
    assert on_side.sum() == 4 * 64
    np.testing.assert_array_equal(m.boundary_vertex_flags, on_side)


def test_row_major_vertices():
    m = build_rect_mesh(Rect(0, 2, 0, 1), 4, 2)
    k = 1 * 5 + 3
    np.testing.assert_allclose(m.vertices[k], [1.5, 0.5])


def test_same_diagonal_everywhere():
    m = build_rect_mesh(UNIT_SQUARE, 3, 3)
    # every triangle contains one lower-left to upper-right diagonal edge
    p = m.vertices[m.triangles]
    for tri in p:
        d = [tri[(k + 1) % 3] - tri[k] for k in range(3)]
        assert any(abs(abs(v[0]) - 1 / 3) < 1e-14 and abs(v[0] - v[1]) < 1e-14 for v in d)


@pytest.mark.parametrize("nx,ny", [(0, 1), (1, 0), (2.5, 2)])
def test_rejects_bad_counts(nx, ny):
    with pytest.raises(ValueError):
        build_rect_mesh(UNIT_SQUARE, nx, ny)


def test_rejects_degenerate_rect():
    with pytest.raises(ValueError):
        Rect(0, 0, 0, 1)
    with pytest.raises(ValueError):
        Rect(0, 1, 1, 0.5)


def test_triangle_geometry_unit_square():
    m = build_rect_mesh(UNIT_SQUARE, 1, 1)
    for t in range(2):
        area, J, invT = triangle_geometry(m, t)
        assert area == 0.5
        np.testing.assert_allclose(invT, np.linalg.inv(J).T, atol=1e-15)


def test_triangle_geometry_reference_and_scaled():
    m = mesh_from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    area, J, _ = triangle_geometry(m, 0)
    assert area == 0.5
    np.testing.assert_array_equal(J, np.eye(2))
    m = mesh_from_arrays([[0, 0], [2, 0], [0, 3]], [[0, 1, 2]])
    area, J, invT = triangle_geometry(m, 0)
    assert area == 3.0
    np.testing.assert_array_equal(J, np.diag([2.0, 3.0]))
    np.testing.assert_allclose(invT, np.diag([0.5, 1 / 3]), atol=1e-16)


def test_triangle_geometry_index_error():
    m = build_rect_mesh(UNIT_SQUARE, 1, 1)
    with pytest.raises(IndexError):
        triangle_geometry(m, 2)
    with pytest.raises(IndexError):
        triangle_geometry(m, -1)


def test_jacobian_maps_reference_vertices():
    m = build_rect_mesh(Rect(-1, 2, 0.5, 1.5), 3, 2)
    J, _, _ = m.jacobians()
    p = m.vertices[m.triangles]
    for t in range(m.n_triangles):
        np.testing.assert_allclose(p[t, 0] + J[t] @ [1, 0], p[t, 1], atol=1e-14)
        np.testing.assert_allclose(p[t, 0] + J[t] @ [0, 1], p[t, 2], atol=1e-14)


rects = st.tuples(
    st.floats(-5, 5), st.floats(0.1, 5), st.floats(-5, 5), st.floats(0.1, 5)
).map(lambda r: Rect(r[0], r[0] + r[1], r[2], r[2] + r[3]))


@settings(max_examples=40, deadline=None)
@given(rects, st.integers(1, 12), st.integers(1, 12))
def test_mesh_invariants(dom, nx, ny):
    m = build_rect_mesh(dom, nx, ny)
    assert m.n_vertices == (nx + 1) * (ny + 1)
    assert m.n_triangles == 2 * nx * ny
    areas = signed_areas(m)
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(dom.area, rel=1e-12)
    keys = np.sort(m.edges, axis=1)
    assert len(np.unique(keys, axis=0)) == m.n_edges
    # edge multiplicity: interior edges twice, boundary edges once
    counts = np.bincount(m.triangle_edges.ravel(), minlength=m.n_edges)
    np.testing.assert_array_equal(counts, np.where(m.boundary_edge_flags, 1, 2))
    # local edge k joins local vertices k and k+1
    for k in range(3):
        e = np.sort(m.edges[m.triangle_edges[:, k]], axis=1)
        v = np.sort(m.triangles[:, [k, (k + 1) % 3]], axis=1)
        np.testing.assert_array_equal(e, v)
    x, y = m.vertices.T
    flag = ((np.abs(x - dom.x0) <= 1e-12) | (np.abs(x - dom.x1) <= 1e-12)
            | (np.abs(y - dom.y0) <= 1e-12) | (np.abs(y - dom.y1) <= 1e-12))
    np.testing.assert_array_equal(m.boundary_vertex_flags, flag)
    diam = max(np.max(np.linalg.norm(m.vertices[m.triangles[:, a]] - m.vertices[m.triangles[:, b]], axis=1))
               for a, b in ((0, 1), (1, 2), (2, 0)))
    assert m.h == pytest.approx(diam, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 16))
def test_refinement_halves_h(n):
    assert build_rect_mesh(UNIT_SQUARE, 2 * n, 2 * n).h * 2 == build_rect_mesh(UNIT_SQUARE, n, n).h
    assert build_rect_mesh(UNIT_SQUARE, n, n).h == pytest.approx(math.sqrt(2) / n, rel=1e-15)
