import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chns.assembly import Spaces, eval_field, interpolate
from chns.fe import ElementKind, build_dofmap, eval_basis, quadrature
from chns.mesh import UNIT_SQUARE, Rect, build_rect_mesh

SCALAR_KINDS = [ElementKind.P1_scalar, ElementKind.P2_scalar]


def test_local_node_counts():
    assert ElementKind.P1_scalar.n_nodes == 3
    assert ElementKind.P2_scalar.n_nodes == 6
    assert ElementKind.P2_vector2.n_nodes * ElementKind.P2_vector2.n_components == 12


def test_p1_barycenter():
    vals, _ = eval_basis(ElementKind.P1_scalar, (1 / 3, 1 / 3))
    np.testing.assert_allclose(vals, [1 / 3] * 3, atol=1e-15)


P2_NODES = [(0, 0), (1, 0), (0, 1), (0.5, 0), (0.5, 0.5), (0, 0.5)]


@pytest.mark.parametrize("k,pt", list(enumerate(P2_NODES)))
def test_p2_lagrange_property(k, pt):
    vals, _ = eval_basis(ElementKind.P2_scalar, pt)
    np.testing.assert_allclose(vals, np.eye(6)[k], atol=1e-15)


def test_p2_closed_form_midpoint():
    # 4 x (1 - x - y) is the function of the midpoint of edge (0, 1)
    x, y = 0.5, 0.0
    vals, grads = eval_basis(ElementKind.P2_scalar, (x, y))
    assert vals[3] == pytest.approx(4 * x * (1 - x - y))
    np.testing.assert_allclose(grads[3], [4 * (1 - 2 * x - y), -4 * x])


def test_outside_reference_rejected():
    with pytest.raises(ValueError):
        eval_basis(ElementKind.P1_scalar, (0.6, 0.5))
    with pytest.raises(ValueError):
        eval_basis(ElementKind.P2_scalar, (-1e-9, 0.2))
    eval_basis(ElementKind.P2_scalar, (1.0 + 5e-13, 0.0))


ref_points = st.tuples(st.floats(0, 1), st.floats(0, 1)).map(
    lambda p: (p[0], p[1]) if p[0] + p[1] <= 1 else (1 - p[0], 1 - p[1]))


@settings(max_examples=20)
@given(ref_points)
def test_partition_of_unity(pt):
    for kind in SCALAR_KINDS:
        vals, grads = eval_basis(kind, pt)
        assert abs(vals.sum() - 1) <= 1e-13
        np.testing.assert_allclose(grads.sum(axis=0), 0, atol=1e-13)


def test_gradients_match_finite_differences(rng):
    for kind in SCALAR_KINDS:
        for _ in range(5):
            p = rng.uniform(0.1, 0.4, 2)
            _, g = eval_basis(kind, p)
            h = 1e-6
            for d in range(2):
                e = np.eye(2)[d] * h
                fd = (eval_basis(kind, p + e)[0] - eval_basis(kind, p - e)[0]) / (2 * h)
                np.testing.assert_allclose(g[:, d], fd, atol=1e-8)


@pytest.mark.parametrize("degree", [4, 5, 6])
def test_quadrature_examples(degree):
    q = quadrature(degree)
    x, y = q.points.T
    assert np.all(q.weights > 0)
    assert q.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert q.weights @ x == pytest.approx(1 / 6, abs=1e-14)
    assert q.weights @ (x ** 2 * y ** 2) == pytest.approx(1 / 180, abs=1e-14)


def _monomial_integral(a, b):
    # int over the reference triangle of x^a y^b = a! b! / (a + b + 2)!
    from math import factorial
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("degree", [4, 5, 6])
def test_quadrature_exact_to_degree(degree):
    q = quadrature(degree)
    x, y = q.points.T
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            assert q.weights @ (x ** a * y ** b) == pytest.approx(_monomial_integral(a, b), abs=1e-14)


@pytest.mark.parametrize("degree", [1, 3, 7])
def test_quadrature_unsupported(degree):
    with pytest.raises(ValueError):
        quadrature(degree)


def test_dofmap_examples():
    m1 = build_rect_mesh(UNIT_SQUARE, 1, 1)
    d = build_dofmap(m1, ElementKind.P1_scalar)
    assert d.n_dofs == 4
    np.testing.assert_array_equal(d.boundary_dofs, np.arange(4))
    assert build_dofmap(m1, ElementKind.P2_scalar).n_dofs == 9
    m2 = build_rect_mesh(UNIT_SQUARE, 2, 2)
    dv = build_dofmap(m2, ElementKind.P2_vector2)
    assert dv.n_dofs == 50
    assert len(dv.boundary_dofs) == 32


def test_vector_boundary_dofs_from_coordinates():
    m = build_rect_mesh(UNIT_SQUARE, 3, 2)
    dv = build_dofmap(m, ElementKind.P2_vector2)
    xy = dv.dof_coords[: dv.n_nodes]
    on = np.flatnonzero(np.isclose(xy, 0).any(1) | np.isclose(xy, 1).any(1))
    expected = np.concatenate([on, on + dv.n_nodes])
    np.testing.assert_array_equal(np.sort(dv.boundary_dofs), np.sort(expected))
    assert np.all(np.diff(dv.boundary_dofs) > 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_dofmap_consistency(nx, ny):
    m = build_rect_mesh(Rect(0, 2, -1, 1), nx, ny)
    for kind in (ElementKind.P1_scalar, ElementKind.P2_scalar):
        d = build_dofmap(m, kind)
        expected = m.n_vertices + (m.n_edges if kind is ElementKind.P2_scalar else 0)
        assert d.n_dofs == expected
        # every dof shows up and its coordinates agree from every cell
        assert set(np.unique(d.cell_dofs)) == set(range(d.n_dofs))
        p = m.vertices[m.triangles]
        local = np.concatenate([p, (p + np.roll(p, -1, axis=1)) / 2], axis=1)[:, : kind.n_nodes]
        np.testing.assert_allclose(d.dof_coords[d.cell_dofs], local, atol=1e-14)


def test_dofmap_deterministic():
    m = build_rect_mesh(UNIT_SQUARE, 5, 3)
    a = build_dofmap(m, ElementKind.P2_vector2)
    b = build_dofmap(build_rect_mesh(UNIT_SQUARE, 5, 3), ElementKind.P2_vector2)
    np.testing.assert_array_equal(a.cell_dofs, b.cell_dofs)
    np.testing.assert_array_equal(a.boundary_dofs, b.boundary_dofs)


@pytest.mark.parametrize("kind,f", [
    (ElementKind.P1_scalar, lambda x, y: 1.5 - 2 * x + 0.25 * y),
    (ElementKind.P2_scalar, lambda x, y: 1.5 - 2 * x + 0.25 * y),
    (ElementKind.P2_scalar, lambda x, y: x * x - 3 * x * y + 0.5 * y * y + x),
])
def test_interpolation_reproduces_polynomials(kind, f):
    S = Spaces(build_rect_mesh(Rect(-0.4, 0.4, -0.4, 0.4), 5, 4))
    dm = S.p1 if kind is ElementKind.P1_scalar else S.p2
    vals, _ = interpolate(dm, f).at_qp(S)
    np.testing.assert_allclose(vals, f(S.xq[..., 0], S.xq[..., 1]), atol=1e-13)
    # pointwise check through eval_field as well
    v, _ = eval_field(interpolate(dm, f), 3, (0.2, 0.3))
    tri = S.mesh.vertices[S.mesh.triangles[3]]
    x, y = tri[0] + 0.2 * (tri[1] - tri[0]) + 0.3 * (tri[2] - tri[0])
    assert v == pytest.approx(f(x, y), abs=1e-13)
