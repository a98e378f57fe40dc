"""Manufactured solution, forcing terms, error norms and rate tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .assembly import Field, Velocity, spaces_for
from .mesh import UNIT_SQUARE, build_rect_mesh
from .scheme import SchemeParams, Sources, advance, initial_state

PI = math.pi

NORMS = ("phi_L2", "mu_l2L2", "u_L2", "p_l2L2", "grad_u_L2", "rho")
NORM_LABELS = {
    "phi_L2": "||phi - phi_h||_{linf(L2)}",
    "mu_l2L2": "||mu - mu_h||_{l2(L2)}",
    "u_L2": "||u - u_h||_{linf(L2)}",
    "p_l2L2": "||p - p_h||_{l2(L2)}",
    "grad_u_L2": "||grad(u - u_h)||_{linf(L2)}",
    "rho": "|rho - rho_h|_{linf}",
}


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form manufactured fields on the unit square.

    ``phi = 2 + sin t cos(pi x) cos(pi y)``,
    ``u = pi sin t [sin^2(pi x) sin(2 pi y), -sin^2(pi y) sin(2 pi x)]``,
    ``p = cos(pi x) sin(pi y) sin t`` and ``mu = -lam lap(phi) + k F'(phi)``
    with ``k`` the scheme's double-well weight.  Every method takes
    ``(t, x, y)`` with array ``x, y``.
    """

    params: SchemeParams

    # -- phase field ------------------------------------------------------
    def phi(self, t, x, y):
        return 2.0 + np.sin(t) * np.cos(PI * x) * np.cos(PI * y)

    def phi_t(self, t, x, y):
        return np.cos(t) * np.cos(PI * x) * np.cos(PI * y)

    def grad_phi(self, t, x, y):
        s = np.sin(t)
        return np.stack([-PI * s * np.sin(PI * x) * np.cos(PI * y),
                         -PI * s * np.cos(PI * x) * np.sin(PI * y)])

    def lap_phi(self, t, x, y):
        return -2.0 * PI ** 2 * np.sin(t) * np.cos(PI * x) * np.cos(PI * y)

    # -- chemical potential -----------------------------------------------
    def _fp(self, phi, order):
        eps2 = self.params.epsilon ** 2
        if order == 1:
            return (phi ** 3 - phi) / eps2
        if order == 2:
            return (3.0 * phi ** 2 - 1.0) / eps2
        return 6.0 * phi / eps2

    def mu(self, t, x, y):
        p = self.params
        return -p.lam * self.lap_phi(t, x, y) + p.fprime_weight * self._fp(self.phi(t, x, y), 1)

    def grad_mu(self, t, x, y):
        # -lam lap(phi) = 2 pi^2 lam (phi - 2), so mu is a function of phi alone
        p = self.params
        phi = self.phi(t, x, y)
        return (2.0 * PI ** 2 * p.lam + p.fprime_weight * self._fp(phi, 2)) * self.grad_phi(t, x, y)

    def lap_mu(self, t, x, y):
        p = self.params
        phi = self.phi(t, x, y)
        lap = self.lap_phi(t, x, y)
        g = self.grad_phi(t, x, y)
        lap_fp = self._fp(phi, 2) * lap + self._fp(phi, 3) * (g[0] ** 2 + g[1] ** 2)
        return 2.0 * PI ** 2 * p.lam * lap + p.fprime_weight * lap_fp

    # -- velocity and pressure --------------------------------------------
    def u(self, t, x, y):
        s = PI * np.sin(t)
        return np.stack([s * np.sin(PI * x) ** 2 * np.sin(2 * PI * y),
                         -s * np.sin(PI * y) ** 2 * np.sin(2 * PI * x)])

    def u_t(self, t, x, y):
        c = PI * np.cos(t)
        return np.stack([c * np.sin(PI * x) ** 2 * np.sin(2 * PI * y),
                         -c * np.sin(PI * y) ** 2 * np.sin(2 * PI * x)])

    def grad_u(self, t, x, y):
        """Array [component, derivative, ...]."""
        s = np.sin(t)
        s2x, s2y = np.sin(2 * PI * x), np.sin(2 * PI * y)
        c2x, c2y = np.cos(2 * PI * x), np.cos(2 * PI * y)
        sx2, sy2 = np.sin(PI * x) ** 2, np.sin(PI * y) ** 2
        a = PI ** 2 * s * s2x * s2y
        return np.stack([
            np.stack([a, 2 * PI ** 2 * s * sx2 * c2y]),
            np.stack([-2 * PI ** 2 * s * sy2 * c2x, -a]),
        ])

    def lap_u(self, t, x, y):
        s = np.sin(t)
        return np.stack([
            2 * PI ** 3 * s * np.sin(2 * PI * y) * (1 - 4 * np.sin(PI * x) ** 2),
            -2 * PI ** 3 * s * np.sin(2 * PI * x) * (1 - 4 * np.sin(PI * y) ** 2),
        ])

    def p(self, t, x, y):
        return np.cos(PI * x) * np.sin(PI * y) * np.sin(t)

    def grad_p(self, t, x, y):
        s = np.sin(t)
        return np.stack([-PI * s * np.sin(PI * x) * np.sin(PI * y),
                         PI * s * np.cos(PI * x) * np.cos(PI * y)])

    # -- derived ----------------------------------------------------------
    def rho(self, t, n_gauss: int = 40) -> float:
        """``sqrt(int F(phi(t)) + C0)`` by tensor Gauss-Legendre quadrature."""
        g, w = np.polynomial.legendre.leggauss(n_gauss)
        xs = 0.5 * (g + 1.0)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        W = 0.25 * np.outer(w, w)
        phi = self.phi(t, X, Y)
        F = (phi ** 2 - 1.0) ** 2 / (4.0 * self.params.epsilon ** 2)
        return math.sqrt(float(np.sum(W * F)) + self.params.C0)


def exact_fields(t: float, params: SchemeParams) -> dict:
    """Closures of ``(x, y)`` for every exact field at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    ex = ExactSolution(params)
    names = ("phi", "phi_t", "grad_phi", "lap_phi", "mu", "grad_mu", "lap_mu",
             "u", "u_t", "grad_u", "lap_u", "p", "grad_p")
    return {n: (lambda f: (lambda x, y: f(t, x, y)))(getattr(ex, n)) for n in names}


def forcing_terms(t, x, y, params: SchemeParams):
    """Right-hand sides that make the manufactured fields an exact solution.

    ``f_phi = phi_t + u . grad(phi) - M lap(mu)`` and
    ``f_u = u_t + (u . grad) u - nu lap(u) + grad(p) - mu grad(phi)``.
    """
    ex = ExactSolution(params)
    u = ex.u(t, x, y)
    gphi = ex.grad_phi(t, x, y)
    f_phi = ex.phi_t(t, x, y) + u[0] * gphi[0] + u[1] * gphi[1] - params.M * ex.lap_mu(t, x, y)
    gu = ex.grad_u(t, x, y)
    adv = np.stack([u[0] * gu[c, 0] + u[1] * gu[c, 1] for c in range(2)])
    f_u = (ex.u_t(t, x, y) + adv - params.nu * ex.lap_u(t, x, y) + ex.grad_p(t, x, y)
           - ex.mu(t, x, y) * gphi)
    return f_phi, f_u


def manufactured_sources(params: SchemeParams) -> Sources:
    return Sources(
        phi=lambda t, x, y: forcing_terms(t, x, y, params)[0],
        u=lambda t, x, y: tuple(forcing_terms(t, x, y, params)[1]),
    )


def error_norm(field, exact: Callable, t: float, norm: str = "L2") -> float:
    """``||field - exact(t)||`` in L2 or the H1 seminorm.

    ``exact(t, x, y)`` returns values for ``L2`` and gradients for
    ``H1_semi`` (shape (2, ...) for scalars, (2, 2, ...) for vectors).
    """
    base = field.base if isinstance(field, Velocity) else field
    S = spaces_for(base.dofmap.mesh)
    x, y = S.xq[..., 0], S.xq[..., 1]
    vals, grads = field.at_qp(S)
    ex = np.asarray(exact(t, x, y), dtype=float)
    if norm == "L2":
        if vals.ndim == 3:
            diff = vals - np.moveaxis(np.broadcast_to(ex, (2,) + x.shape), 0, -1)
            return math.sqrt(S.integrate(np.sum(diff ** 2, axis=-1)))
        return math.sqrt(S.integrate((vals - ex) ** 2))
    if norm == "H1_semi":
        if vals.ndim == 3:
            ex = np.moveaxis(np.moveaxis(np.broadcast_to(ex, (2, 2) + x.shape), 0, -1), 0, -1)
            return math.sqrt(S.integrate(np.sum((grads - ex) ** 2, axis=(-2, -1))))
        ex = np.moveaxis(np.broadcast_to(ex, (2,) + x.shape), 0, -1)
        return math.sqrt(S.integrate(np.sum((grads - ex) ** 2, axis=-1)))
    raise ValueError(f"unknown norm {norm!r}; use 'L2' or 'H1_semi'")


# ---------------------------------------------------------------------------
# convergence study

@dataclass
class RateTable:
    h: list = field(default_factory=list)
    errors: dict = field(default_factory=lambda: {n: [] for n in NORMS})

    def add(self, h: float, errs: dict):
        self.h.append(h)
        for n in NORMS:
            self.errors[n].append(errs[n])

    def rates(self, norm: str) -> list:
        """``log2(e_{k-1} / e_k)`` for k >= 1, ``None`` for the first row."""
        e = self.errors[norm]
        out: list = [None]
        for k in range(1, len(e)):
            ratio = self.h[k - 1] / self.h[k]
            out.append(math.log(e[k - 1] / e[k]) / math.log(ratio))
        return out

    def finest_rate(self, norm: str) -> Optional[float]:
        return self.rates(norm)[-1] if len(self.h) > 1 else None

    def rows(self):
        for n in NORMS:
            for h, e, r in zip(self.h, self.errors[n], self.rates(n)):
                yield h, n, e, r

    def format(self) -> str:
        lines = []
        for n in NORMS:
            lines.append(NORM_LABELS[n])
            lines.append(f"  {'h':>8}  {'error':>12}  {'rate':>7}")
            for h, e, r in zip(self.h, self.errors[n], self.rates(n)):
                rs = "" if r is None else f"{r:7.4f}"
                lines.append(f"  1/{round(1 / h):<6d}  {e:12.4e}  {rs:>7}")
        return "\n".join(lines)


class ConvergenceAborted(RuntimeError):
    """A resolution failed; ``table`` holds the rows finished before it."""

    def __init__(self, message, table: RateTable):
        super().__init__(message)
        self.table = table


def steps_for(h: float, T: float) -> int:
    """Number of steps with ``tau = T / N`` and ``tau <= h^3``."""
    return max(1, math.ceil(T / h ** 3 - 1e-9))


def run_manufactured(nx: int, params: SchemeParams, T: float, n_steps: Optional[int] = None,
                     callback=None) -> dict:
    """Run the forced problem on an ``nx`` x ``nx`` mesh and return all error norms."""
    h = 1.0 / nx
    N = steps_for(h, T) if n_steps is None else n_steps
    params = params.with_tau(T / N)
    S = spaces_for(build_rect_mesh(UNIT_SQUARE, nx, nx))
    ex = ExactSolution(params)
    state = initial_state(S, params, lambda x, y: ex.phi(0.0, x, y),
                          lambda x, y: tuple(ex.u(0.0, x, y)))
    src = manufactured_sources(params)

    acc = {n: 0.0 for n in NORMS}
    sav_dev = 0.0

    def record(st):
        nonlocal sav_dev
        t = st.t
        acc["phi_L2"] = max(acc["phi_L2"], error_norm(st.phi, ex.phi, t))
        acc["u_L2"] = max(acc["u_L2"], error_norm(st.u, ex.u, t))
        acc["grad_u_L2"] = max(acc["grad_u_L2"], error_norm(st.u, ex.grad_u, t, "H1_semi"))
        acc["mu_l2L2"] += params.tau * error_norm(st.mu, ex.mu, t) ** 2
        acc["p_l2L2"] += params.tau * error_norm(st.p, ex.p, t) ** 2
        acc["rho"] = max(acc["rho"], abs(ex.rho(t) - st.rho))

    record(state)
    for _ in range(N):
        state, report, info = advance(state, params, src)
        record(state)
        sav_dev = max(sav_dev, abs(report.sav_ratio - 1.0))
        if callback is not None:
            callback(state, report, info)
    acc["mu_l2L2"] = math.sqrt(acc["mu_l2L2"])
    acc["p_l2L2"] = math.sqrt(acc["p_l2L2"])
    acc["sav_deviation"] = sav_dev
    acc["n_steps"] = N
    acc["tau"] = params.tau
    return acc


def convergence_study(h_list: Sequence[float], params: SchemeParams, T: float,
                      progress: Optional[Callable] = None) -> RateTable:
    """Errors of the manufactured problem with ``tau = T / ceil(T / h^3)``."""
    h_list = [float(h) for h in h_list]
    for a, b in zip(h_list, h_list[1:]):
        if not math.isclose(a / b, 2.0, rel_tol=1e-9):
            raise ValueError(f"h_list must halve at each entry, got {a} then {b}")
    table = RateTable()
    for h in h_list:
        nx = round(1.0 / h)
        if not math.isclose(nx * h, 1.0, rel_tol=1e-9):
            raise ValueError(f"1/h must be an integer, got h = {h}")
        try:
            errs = run_manufactured(nx, params, T)
        except Exception as exc:  # keep the finished rows
            raise ConvergenceAborted(f"h = 1/{nx}: {exc}", table) from exc
        table.add(h, errs)
        if progress is not None:
            progress(h, errs)
    return table


def second_moments(phi: Field, S) -> tuple:
    """Central second moments ``(Ixx, Iyy)`` of the region ``phi_h < 0``.

    The indicator is sampled at the quadrature points, so the result is
    accurate to the mesh resolution of the interface.
    """
    val, _ = phi.at_qp(S)
    w = S.wdet * (val < 0.0)
    area = w.sum()
    if area == 0.0:
        raise ValueError("phi has no negative region")
    x, y = S.xq[..., 0], S.xq[..., 1]
    xc, yc = np.sum(w * x) / area, np.sum(w * y) / area
    return float(np.sum(w * (x - xc) ** 2)), float(np.sum(w * (y - yc) ** 2))


def anisotropy(phi: Field, S) -> float:
    """``Ixx / Iyy`` of the negative phase; 1 for a disc."""
    ixx, iyy = second_moments(phi, S)
    return ixx / iyy
