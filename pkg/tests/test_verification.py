import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

import chns.verification as ver
from chns.assembly import Field, Spaces, Velocity, interpolate, zero_field
from chns.mesh import UNIT_SQUARE, build_rect_mesh
from chns.scheme import SchemeParams
from chns.verification import (NORMS, ConvergenceAborted, ExactSolution, RateTable, convergence_study,
                               error_norm, exact_fields, forcing_terms, run_manufactured, steps_for)

import oracles

PARAMS = SchemeParams(M=0.1, lam=0.04, nu=0.01, epsilon=0.2, tau=1e-3)


def symbolic_system(params):
    """Exact fields and forcing built symbolically from the closed forms."""
    t, x, y = sp.symbols("t x y")
    pi = sp.pi
    phi = 2 + sp.sin(t) * sp.cos(pi * x) * sp.cos(pi * y)
    u = sp.Matrix([pi * sp.sin(pi * x) ** 2 * sp.sin(2 * pi * y) * sp.sin(t),
                   -pi * sp.sin(pi * y) ** 2 * sp.sin(2 * pi * x) * sp.sin(t)])
    p = sp.cos(pi * x) * sp.sin(pi * y) * sp.sin(t)
    k = params.lam if params.lambda_on_fprime else 1
    eps = sp.Rational(str(params.epsilon))
    lap = lambda f: sp.diff(f, x, 2) + sp.diff(f, y, 2)  # noqa: E731
    mu = -params.lam * lap(phi) + k * (phi ** 3 - phi) / eps ** 2
    grad = lambda f: sp.Matrix([sp.diff(f, x), sp.diff(f, y)])  # noqa: E731
    f_phi = sp.diff(phi, t) + (u.T * grad(phi))[0] - params.M * lap(mu)
    conv = sp.Matrix([(u.T * grad(u[c]))[0] for c in range(2)])
    f_u = sp.diff(u, t) + conv - params.nu * sp.Matrix([lap(u[0]), lap(u[1])]) + grad(p) - mu * grad(phi)
    div = sp.diff(u[0], x) + sp.diff(u[1], y)
    mods = "numpy"
    return dict(
        phi=sp.lambdify((t, x, y), phi, mods), mu=sp.lambdify((t, x, y), mu, mods),
        p=sp.lambdify((t, x, y), p, mods), div=sp.lambdify((t, x, y), div, mods),
        f_phi=sp.lambdify((t, x, y), f_phi, mods),
        f_u=[sp.lambdify((t, x, y), f_u[c], mods) for c in range(2)],
        u=[sp.lambdify((t, x, y), u[c], mods) for c in range(2)],
    )


@pytest.fixture(scope="module", params=[True, False], ids=["lam_on_fp", "plain_fp"])
def system(request):
    prm = SchemeParams(M=0.1, lam=0.04, nu=0.01, epsilon=0.2, tau=1e-3, lambda_on_fprime=request.param)
    return prm, symbolic_system(prm)


def test_initial_fields():
    f = exact_fields(0.0, PARAMS)
    X, Y = np.meshgrid(np.linspace(0, 1, 7), np.linspace(0, 1, 5))
    np.testing.assert_array_equal(f["phi"](X, Y), 2.0)
    np.testing.assert_array_equal(f["u"](X, Y), 0.0)
    np.testing.assert_array_equal(f["p"](X, Y), 0.0)
    with pytest.raises(ValueError):
        exact_fields(-1.0, PARAMS)


def test_velocity_vanishes_on_left_edge(rng):
    ex = ExactSolution(PARAMS)
    t, y = rng.uniform(0, 3, 20), rng.uniform(0, 1, 20)
    np.testing.assert_allclose(ex.u(t, 0.0, y)[0], 0.0, atol=1e-15)


def test_divergence_free(rng, system):
    prm, sym = system
    ex = ExactSolution(prm)
    t, x, y = rng.uniform(0, 2, (3, 20))
    g = ex.grad_u(t, x, y)
    np.testing.assert_allclose(g[0, 0] + g[1, 1], 0.0, atol=1e-12)
    np.testing.assert_allclose(sym["div"](t, x, y), 0.0, atol=1e-12)


def test_fields_match_symbolic(rng, system):
    prm, sym = system
    ex = ExactSolution(prm)
    t, x, y = rng.uniform(0, 2, (3, 30))
    np.testing.assert_allclose(ex.phi(t, x, y), sym["phi"](t, x, y), atol=1e-13)
    np.testing.assert_allclose(ex.mu(t, x, y), sym["mu"](t, x, y), atol=1e-11)
    np.testing.assert_allclose(ex.p(t, x, y), sym["p"](t, x, y), atol=1e-13)
    for c in range(2):
        np.testing.assert_allclose(ex.u(t, x, y)[c], sym["u"][c](t, x, y), atol=1e-13)


def test_forcing_matches_symbolic(rng, system):
    prm, sym = system
    t, x, y = rng.uniform(0, 2, (3, 50))
    f_phi, f_u = forcing_terms(t, x, y, prm)
    scale = 1 + np.abs(sym["f_phi"](t, x, y))
    np.testing.assert_allclose(f_phi / scale, sym["f_phi"](t, x, y) / scale, atol=1e-12)
    for c in range(2):
        np.testing.assert_allclose(f_u[c], sym["f_u"][c](t, x, y), atol=1e-10, rtol=1e-12)


def test_forcing_at_t0():
    rng = np.random.default_rng(3)
    x, y = rng.uniform(0, 1, (2, 25))
    f_phi, f_u = forcing_terms(0.0, x, y, PARAMS)
    pi = np.pi
    np.testing.assert_allclose(f_phi, np.cos(pi * x) * np.cos(pi * y), atol=1e-12)
    np.testing.assert_allclose(f_u[0], pi * np.sin(pi * x) ** 2 * np.sin(2 * pi * y), atol=1e-12)
    np.testing.assert_allclose(f_u[1], -pi * np.sin(pi * y) ** 2 * np.sin(2 * pi * x), atol=1e-12)


def _d(f, k, h=1e-3):
    """6th-order central difference of f along coordinate k of (t, x, y)."""
    c = [(-3, -1 / 60), (-2, 3 / 20), (-1, -3 / 4), (1, 3 / 4), (2, -3 / 20), (3, 1 / 60)]

    def g(*a):
        out = 0.0
        for s, w in c:
            b = list(a)
            b[k] = b[k] + s * h
            out = out + w * f(*b)
        return out / h
    return g


def test_forcing_finite_difference_oracle(rng):
    ex = ExactSolution(PARAMS)
    t, x, y = rng.uniform(0.1, 2, 50), rng.uniform(0.05, 0.95, 50), rng.uniform(0.05, 0.95, 50)
    phi = ex.phi
    mu = lambda t, x, y: -PARAMS.lam * (_d(_d(phi, 1), 1)(t, x, y) + _d(_d(phi, 2), 2)(t, x, y)) \
        + PARAMS.fprime_weight * (phi(t, x, y) ** 3 - phi(t, x, y)) / PARAMS.epsilon ** 2  # noqa: E731
    lap_mu = _d(_d(mu, 1, 1e-2), 1, 1e-2)(t, x, y) + _d(_d(mu, 2, 1e-2), 2, 1e-2)(t, x, y)
    u = ex.u(t, x, y)
    fd = _d(phi, 0)(t, x, y) + u[0] * _d(phi, 1)(t, x, y) + u[1] * _d(phi, 2)(t, x, y) - PARAMS.M * lap_mu
    f_phi, _ = forcing_terms(t, x, y, PARAMS)
    assert np.max(np.abs(f_phi - fd)) <= 1e-6


def test_rho_exact_vs_adaptive_quadrature():
    ex = ExactSolution(PARAMS)
    for t in (0.0, 0.004, 0.01, 0.7):
        F = lambda yy, xx: (ex.phi(t, xx, yy) ** 2 - 1) ** 2 / (4 * PARAMS.epsilon ** 2)  # noqa: E731
        val, _ = integrate.dblquad(F, 0, 1, 0, 1, epsabs=1e-13, epsrel=1e-13)
        assert ex.rho(t) == pytest.approx(math.sqrt(val + PARAMS.C0), rel=1e-12)


def test_error_norm_examples(rng):
    S = Spaces(build_rect_mesh(UNIT_SQUARE, 4, 4))
    aff = lambda t, x, y: 1 + 2 * x - y  # noqa: E731
    assert error_norm(interpolate(S.p1, lambda x, y: aff(0, x, y)), aff, 0.0) <= 1e-13
    assert error_norm(zero_field(S.p1), lambda t, x, y: 2.0, 0.0) == pytest.approx(2.0, abs=1e-14)
    grad = lambda t, x, y: np.array([2.0 + 0 * x, -1.0 + 0 * x])  # noqa: E731
    assert error_norm(interpolate(S.p1, lambda x, y: aff(0, x, y)), grad, 0.0, "H1_semi") <= 1e-13
    with pytest.raises(ValueError):
        error_norm(zero_field(S.p1), aff, 0.0, "H2")


def test_error_norm_dense_oracle(rng, small_spaces):
    S, D = small_spaces, oracles.Dense(small_spaces)
    c = rng.standard_normal(S.p1.n_dofs)
    poly = lambda t, x, y: x * y - 0.5 * x * x + t  # noqa: E731  (degree 2 keeps the integrand exact)
    got = error_norm(Field(S.p1, c), poly, 0.3)
    ref = math.sqrt(D.integrate(lambda cell, k: (D.scalar(cell, c)[0]
                                                 - poly(0.3, cell["pts"][:, 0], cell["pts"][:, 1])) ** 2))
    assert got == pytest.approx(ref, abs=1e-12)
    u = rng.standard_normal(S.p2v.n_dofs)
    off = rng.standard_normal((S.n_triangles, 2))
    vel = lambda t, x, y: np.array([x * y, 1 - y])  # noqa: E731
    got = error_norm(Velocity(Field(S.p2v, u), off), vel, 0.0)
    ref = math.sqrt(D.integrate(lambda cell, k: np.sum(
        (D.vector(cell, u, off, k)[0] - vel(0, cell["pts"][:, 0], cell["pts"][:, 1]).T) ** 2, 1)))
    assert got == pytest.approx(ref, abs=1e-12)


def test_steps_for():
    assert [steps_for(1 / n, 0.01) for n in (4, 8, 16, 32, 64)] == [1, 6, 41, 328, 2622]
    for n in (4, 8, 16, 32):
        assert 0.01 / steps_for(1 / n, 0.01) <= (1 / n) ** 3 * (1 + 1e-12)


@settings(max_examples=30)
@given(st.lists(st.floats(1e-12, 1.0), min_size=2, max_size=6))
def test_rate_table_formula(errs):
    tab = RateTable()
    for k, e in enumerate(errs):
        tab.add(2.0 ** -(k + 2), {n: e for n in NORMS})
    for n in NORMS:
        r = tab.rates(n)
        assert r[0] is None and len(r) == len(errs)
        for k in range(1, len(errs)):
            assert r[k] == pytest.approx(math.log2(errs[k - 1] / errs[k]), abs=1e-12)
        assert tab.finest_rate(n) == r[-1]


def test_small_study_structure():
    tab = convergence_study([1 / 4, 1 / 8], PARAMS, 0.01)
    assert tab.h == [0.25, 0.125]
    rows = list(tab.rows())
    assert len(rows) == 2 * len(NORMS)
    for n in NORMS:
        assert all(np.isfinite(tab.errors[n]))
        rates = tab.rates(n)
        assert rates[0] is None and np.isfinite(rates[1])
    text = tab.format()
    assert "1/4" in text and "1/8" in text


def test_study_validates_h_list():
    with pytest.raises(ValueError):
        convergence_study([1 / 4, 1 / 6], PARAMS, 0.01)
    with pytest.raises(ValueError):
        convergence_study([0.3, 0.15], PARAMS, 0.01)


def test_study_keeps_partial_table(monkeypatch):
    calls = []

    def fake(nx, params, T, **kw):
        calls.append(nx)
        if nx == 8:
            raise RuntimeError("solver blew up")
        return {n: 1.0 for n in NORMS} | {"n_steps": 1}

    monkeypatch.setattr(ver, "run_manufactured", fake)
    with pytest.raises(ConvergenceAborted) as err:
        convergence_study([1 / 4, 1 / 8, 1 / 16], PARAMS, 0.01)
    assert err.value.table.h == [0.25]
    assert "1/8" in str(err.value)
    assert calls == [4, 8]


def test_manufactured_run_reports_norms():
    out = run_manufactured(4, PARAMS, 0.01)
    assert set(NORMS) <= set(out)
    assert out["n_steps"] == 1 and out["tau"] == 0.01
    assert all(np.isfinite(out[n]) and out[n] >= 0 for n in NORMS)
