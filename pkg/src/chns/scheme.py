"""Decoupled first-order SAV / pressure-correction time stepping.

One step advances (phi, mu, u_tilde, u, p, rho) in four sequential solves:

1. Cahn-Hilliard pair (phi, mu) with the old velocity as advection field
   and the double-well derivative taken explicitly.
2. Tentative velocity with explicit, SAV-scaled skew convection, the old
   pressure gradient and the new capillary force.
3. Scalar auxiliary variable from a quadratic equation.
4. Pressure increment from a Neumann Poisson problem and the projected
   velocity ``u = u_tilde - tau * grad(p_new - p_old)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .assembly import (
    Field,
    LoadKind,
    OperatorKind,
    Spaces,
    Velocity,
    assemble_load,
    assemble_operator,
    divergence_residual,
    double_well,
    interpolate,
    l2_norm_sq,
    operator,
    spaces_for,
    velocity_mass_load,
    zero_field,
)
from .linalg import Method, SolverConfig, apply_dirichlet, solve

log = logging.getLogger(__name__)


class SchemeBreakdown(RuntimeError):
    """The SAV quadratic has no admissible positive root."""


@dataclass(frozen=True)
class SchemeParams:
    M: float
    lam: float
    nu: float
    epsilon: float
    tau: float
    C0: float = 1.0
    lambda_on_fprime: bool = True
    solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        for name in ("M", "lam", "nu", "epsilon", "tau", "C0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epsilon > 1:
            raise ValueError(f"epsilon must not exceed 1, got {self.epsilon}")

    @property
    def fprime_weight(self) -> float:
        """Coefficient in front of F'(phi) in the chemical potential."""
        return self.lam if self.lambda_on_fprime else 1.0

    @property
    def spd_method(self) -> Method:
        return self.solver.method

    def with_tau(self, tau: float) -> "SchemeParams":
        return replace(self, tau=tau)


@dataclass(frozen=True, eq=False)
class State:
    spaces: Spaces
    phi: Field
    mu: Field
    u_tilde: Field
    u: Velocity
    p: Field
    rho: float
    t: float = 0.0
    step: int = 0
    p_increment: Optional[np.ndarray] = None  # warm start for the next pressure solve


@dataclass(frozen=True)
class EnergyReport:
    E_modified: float
    E_theorem: float
    dissipation_bound: float
    mass: float
    sav_ratio: float
    rho: float = 0.0


@dataclass
class StepInfo:
    """Per-step diagnostics collected by :func:`advance`."""

    sav_roots: tuple = ()
    sav_discriminant: float = 0.0
    sav_clamped: bool = False
    E1_next: float = 0.0
    divergence_residual: float = 0.0
    divergence_reference: float = 0.0
    mass_change: float = 0.0


@dataclass(frozen=True)
class Sources:
    """Optional right-hand sides, called as ``f(t, x, y)``.

    ``u`` returns a pair ``(fx, fy)``.
    """

    phi: Optional[Callable] = None
    u: Optional[Callable] = None


# ---------------------------------------------------------------------------
# helpers

def _config(params: SchemeParams, method: Method) -> SolverConfig:
    return SolverConfig(params.solver.rel_tol, params.solver.max_iters, method)


def compute_E1(phi: Field, params: SchemeParams) -> float:
    """Shifted bulk energy ``int F(phi) dx + C0``."""
    S = spaces_for(phi.dofmap.mesh)
    vals, _ = phi.at_qp(S)
    return S.integrate(double_well(vals, params.epsilon)) + params.C0


def _velocity_matrix(S: Spaces, params: SchemeParams):
    key = ("velocity_system", params.tau, params.nu)

    def build():
        A = operator(S, OperatorKind.mass_v) * (1.0 / params.tau) + operator(
            S, OperatorKind.stiffness_v) * params.nu
        bd = S.p2v.boundary_dofs
        Ad, _ = apply_dirichlet(A, np.zeros(S.p2v.n_dofs), bd, 0.0)
        return Ad

    return S.cached(key, build)


def initial_state(S: Spaces, params: SchemeParams, phi0, u0=None, t0: float = 0.0) -> State:
    """Nodal interpolants of the initial data.

    ``mu`` solves ``(mu, psi) = lam (grad phi, grad psi) + k (F'(phi), psi)``,
    ``p = 0``, ``u_tilde = u`` and ``rho = sqrt(E1(phi) + C0)``.
    """
    phi = interpolate(S.p1, phi0)
    if u0 is None:
        u = zero_field(S.p2v)
    else:
        u = interpolate(S.p2v, u0)
        bd = S.p2v.boundary_dofs
        c = u.coefficients.copy()
        c[bd] = 0.0
        u = Field(S.p2v, c)
    Mm = operator(S, OperatorKind.mass_s)
    K = operator(S, OperatorKind.stiffness_s)
    rhs = params.lam * (K @ phi.coefficients) + params.fprime_weight * assemble_load(
        S, LoadKind.nonlinear_fprime, phi=phi, epsilon=params.epsilon)
    mu = Field(S.p1, solve(Mm, rhs, _config(params, params.spd_method)))
    rho = float(np.sqrt(compute_E1(phi, params)))
    return State(S, phi, mu, u, Velocity(u), zero_field(S.p1), rho, t0, 0)


# ---------------------------------------------------------------------------
# the four steps

def step_cahn_hilliard(state: State, params: SchemeParams, f_phi=None, _cache=None):
    """Step 1: solve the coupled (phi, mu) system.

    ``(phi - phi_n)/tau, w) + (u_n . grad phi, w) + M (grad mu, grad w) = (f, w)``
    ``(mu, psi) - lam (grad phi, grad psi) - k (F'(phi_n), psi) = 0``
    """
    S = state.spaces
    n = S.p1.n_dofs
    tau = params.tau
    A = assemble_operator(S, OperatorKind.ch_coupling, w=state.u, tau=tau,
                          mobility=params.M, lam=params.lam)
    Mm = operator(S, OperatorKind.mass_s)
    fp = assemble_load(S, LoadKind.nonlinear_fprime, phi=state.phi, epsilon=params.epsilon)
    top = (Mm @ state.phi.coefficients) / tau
    if f_phi is not None:
        top = top + assemble_load(S, LoadKind.scalar_source, f=f_phi)
    rhs = np.concatenate([top, params.fprime_weight * fp])
    x0 = np.concatenate([state.phi.coefficients, state.mu.coefficients])
    x = solve(A, rhs, _config(params, Method.bicgstab), x0=x0)
    if _cache is not None:
        _cache["fprime_load"] = fp
        _cache["ch_matrix"] = A
    return Field(S.p1, x[:n]), Field(S.p1, x[n:])


def step_velocity(state: State, phi_next: Field, mu_next: Field, params: SchemeParams,
                  f_u=None, _cache=None) -> Field:
    """Step 2: tentative velocity with homogeneous Dirichlet data."""
    S = state.spaces
    E1 = compute_E1(phi_next, params)
    ratio = state.rho / np.sqrt(E1)
    skew = assemble_load(S, LoadKind.skew_convection, u=state.u)
    cap = assemble_load(S, LoadKind.capillary, phi=phi_next, mu=mu_next)
    G = operator(S, OperatorKind.pressure_grad)
    rhs = (velocity_mass_load(S, state.u) / params.tau - ratio * skew
           - G @ state.p.coefficients + cap)
    if f_u is not None:
        rhs = rhs + assemble_load(S, LoadKind.vector_source, f=f_u)
    rhs[S.p2v.boundary_dofs] = 0.0
    A = _velocity_matrix(S, params)
    x = solve(A, rhs, _config(params, params.spd_method), x0=state.u_tilde.coefficients)
    if _cache is not None:
        _cache.update(E1_next=E1, skew_load=skew, capillary_load=cap)
    return Field(S.p2v, x)


def sav_coefficient(state: State, phi_next: Field, mu_next: Field, u_tilde_next: Field,
                    params: SchemeParams, _cache=None) -> tuple[float, float]:
    """Constant term ``c`` of ``2 rho^2 - 2 rho_n rho + c = 0`` and E1(phi_next)+C0."""
    S = state.spaces
    c = _cache or {}
    fp = c.get("fprime_load")
    if fp is None:
        fp = assemble_load(S, LoadKind.nonlinear_fprime, phi=state.phi, epsilon=params.epsilon)
    E1 = c.get("E1_next") or compute_E1(phi_next, params)
    skew = c.get("skew_load")
    if skew is None:
        skew = assemble_load(S, LoadKind.skew_convection, u=state.u)
    cap = c.get("capillary_load")
    if cap is None:
        cap = assemble_load(S, LoadKind.capillary, phi=phi_next, mu=mu_next)
    C = assemble_operator(S, OperatorKind.convection_phi, w=state.u)
    k = params.fprime_weight
    tau = params.tau
    dphi = phi_next.coefficients - state.phi.coefficients
    conv_B = skew @ u_tilde_next.coefficients
    transport = mu_next.coefficients @ (C @ phi_next.coefficients)
    capillary = cap @ u_tilde_next.coefficients
    total = (fp @ dphi + tau * state.rho / (k * np.sqrt(E1)) * conv_B
             + tau / k * (transport - capillary))
    return -total, E1


def solve_sav_quadratic(rho_n: float, c: float, sqrt_E1: float, info: Optional[StepInfo] = None):
    """Root of ``2 r^2 - 2 rho_n r + c = 0`` with ``r / sqrt_E1`` closest to 1."""
    a, b = 2.0, -2.0 * rho_n
    disc = b * b - 4.0 * a * c
    clamped = False
    if disc < 0.0:
        if -disc <= 1e-12 * (b * b + abs(4.0 * a * c)):
            disc, clamped = 0.0, True
        else:
            raise SchemeBreakdown(f"SAV quadratic has no real root (discriminant {disc:.3e})")
    sq = np.sqrt(disc)
    roots = ((-b + sq) / (2 * a), (-b - sq) / (2 * a))
    if info is not None:
        info.sav_roots, info.sav_discriminant, info.sav_clamped = roots, disc, clamped
    positive = [r for r in roots if r > 0.0]
    if not positive:
        raise SchemeBreakdown(f"SAV quadratic has no positive root: {roots}")
    return min(positive, key=lambda r: abs(r / sqrt_E1 - 1.0))


def step_sav(state: State, phi_next: Field, mu_next: Field, u_tilde_next: Field,
             params: SchemeParams, info: Optional[StepInfo] = None, _cache=None) -> float:
    """Step 3: update the scalar auxiliary variable."""
    c, E1 = sav_coefficient(state, phi_next, mu_next, u_tilde_next, params, _cache)
    if info is not None:
        info.E1_next = E1
    return solve_sav_quadratic(state.rho, c, np.sqrt(E1), info)


def step_projection(state: State, u_tilde_next: Field, params: SchemeParams,
                    info: Optional[StepInfo] = None) -> tuple[Field, Velocity, np.ndarray]:
    """Step 4: pressure increment and projected velocity.

    Solves ``(grad psi, grad q) = (u_tilde, grad q) / tau`` for weighted
    mean-zero ``psi``; returns ``p + psi``, ``u_tilde - tau grad psi`` and
    ``psi``.
    """
    S = state.spaces
    K = operator(S, OperatorKind.stiffness_s)
    G = operator(S, OperatorKind.pressure_grad)
    div_t = G.T @ u_tilde_next.coefficients
    psi = solve(K, div_t / params.tau, _config(params, params.spd_method),
                nullspace="mean_zero", x0=state.p_increment, weights=S.lumped_p1())
    grad_psi = np.einsum("tb,tbd->td", psi[S.p1.cell_dofs], S.G1)
    u_next = Velocity(u_tilde_next, params.tau * grad_psi)
    if info is not None:
        info.divergence_residual = float(np.linalg.norm(divergence_residual(S, u_next)))
        info.divergence_reference = float(np.linalg.norm(div_t))
    return Field(S.p1, state.p.coefficients + psi), u_next, psi


def advance(state: State, params: SchemeParams, sources: Optional[Sources] = None):
    """One full step; returns the new state, its energy report and diagnostics."""
    t1 = state.t + params.tau
    f_phi = f_u = None
    if sources is not None:
        if sources.phi is not None:
            f_phi = lambda x, y: sources.phi(t1, x, y)  # noqa: E731
        if sources.u is not None:
            f_u = lambda x, y: sources.u(t1, x, y)  # noqa: E731
    info = StepInfo()
    cache: dict = {}
    phi, mu = step_cahn_hilliard(state, params, f_phi, _cache=cache)
    u_tilde = step_velocity(state, phi, mu, params, f_u, _cache=cache)
    rho = step_sav(state, phi, mu, u_tilde, params, info, _cache=cache)
    p, u, psi = step_projection(state, u_tilde, params, info)
    new = State(state.spaces, phi, mu, u_tilde, u, p, rho, t1, state.step + 1, psi)
    S = state.spaces
    info.mass_change = float(S.lumped_p1() @ (phi.coefficients - state.phi.coefficients))
    return new, energy_report(new, params), info


def energy_report(state: State, params: SchemeParams) -> EnergyReport:
    """Energies of a state.

    ``E_theorem = lam|grad phi|^2 + |u|^2 + tau^2 |grad p|^2 + 2 k rho^2`` is
    the functional that provably decreases; ``E_modified`` halves the
    field terms and uses ``k rho^2``.  The dissipation bound uses the
    state's ``mu`` and ``u_tilde``.
    """
    S = state.spaces
    K = operator(S, OperatorKind.stiffness_s)
    Kv = operator(S, OperatorKind.stiffness_v)
    k = params.fprime_weight
    grad_phi = state.phi.coefficients @ (K @ state.phi.coefficients)
    grad_p = state.p.coefficients @ (K @ state.p.coefficients)
    u2 = l2_norm_sq(S, state.u)
    fields = params.lam * grad_phi + u2 + params.tau ** 2 * grad_p
    rho2 = state.rho ** 2
    if state.step > 0:
        grad_mu = state.mu.coefficients @ (K @ state.mu.coefficients)
        grad_ut = state.u_tilde.coefficients @ (Kv @ state.u_tilde.coefficients)
        diss = 2 * params.M * params.tau * grad_mu + 2 * params.nu * params.tau * grad_ut
    else:
        diss = 0.0
    return EnergyReport(
        E_modified=0.5 * fields + k * rho2,
        E_theorem=fields + 2 * k * rho2,
        dissipation_bound=float(diss),
        mass=float(S.lumped_p1() @ state.phi.coefficients),
        sav_ratio=float(state.rho / np.sqrt(compute_E1(state.phi, params))),
        rho=float(state.rho),
    )


def run(state: State, params: SchemeParams, n_steps: int, sources: Optional[Sources] = None,
        callback=None):
    """Advance ``n_steps`` times, calling ``callback(state, report, info)`` after each."""
    for _ in range(n_steps):
        state, report, info = advance(state, params, sources)
        if callback is not None:
            callback(state, report, info)
    return state
