"""Finite element fields, bilinear forms and load vectors.

All element loops are vectorized over triangles.  Every integral is a
quadrature sum ``sum_q w_q |det J| f(x_q)`` with one fixed rule, so the
same discrete inner product appears everywhere it is used.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .fe import DofMap, ElementKind, QuadratureRule, build_dofmap, quadrature, reference_tables, _check_ref
from .linalg import SparseMatrix, TripletBuffer, to_sparse
from .mesh import Mesh


class Spaces:
    """Mesh, Taylor-Hood dof maps and quadrature-point geometry.

    ``p1`` carries the phase field, chemical potential and pressure;
    ``p2v`` the velocity.  Constant matrices are assembled on first use
    and cached.
    """

    def __init__(self, mesh: Mesh, quad: Optional[QuadratureRule] = None):
        self.mesh = mesh
        self.quad = quad if quad is not None else quadrature(5)
        self.p1 = build_dofmap(mesh, ElementKind.P1_scalar)
        self.p2 = build_dofmap(mesh, ElementKind.P2_scalar)
        self.p2v = build_dofmap(mesh, ElementKind.P2_vector2)

        J, det, invT = mesh.jacobians()
        pts = self.quad.points
        self.wdet = det[:, None] * self.quad.weights[None, :]  # (nt, nq)
        v0 = mesh.vertices[mesh.triangles[:, 0]]
        self.xq = v0[:, None, :] + np.einsum("tij,qj->tqi", J, pts)

        self.invT = invT
        self.N1, g1 = reference_tables(ElementKind.P1_scalar, pts)
        self.G1 = np.einsum("tij,bj->tbi", invT, g1[0])  # constant per cell
        self.N2, self.g2ref = reference_tables(ElementKind.P2_scalar, pts)
        self.G2 = np.einsum("tij,qbj->tqbi", invT, self.g2ref)
        # (nt, nb, nq) weighted test values, reused by every load vector
        self.wN1 = (self.wdet[:, :, None] * self.N1[None]).transpose(0, 2, 1).copy()
        self.wN2 = (self.wdet[:, :, None] * self.N2[None]).transpose(0, 2, 1).copy()
        self._patterns: dict = {}
        self._ops: dict = {}

    @property
    def n_triangles(self) -> int:
        return self.mesh.n_triangles

    def dofmap(self, kind: ElementKind) -> DofMap:
        return {ElementKind.P1_scalar: self.p1, ElementKind.P2_scalar: self.p2,
                ElementKind.P2_vector2: self.p2v}[kind]

    def integrate(self, values: np.ndarray) -> float:
        """Quadrature sum of cell/point values shaped (nt, nq)."""
        return float(np.sum(self.wdet * values))

    # -- global scatter ---------------------------------------------------
    def _pattern(self, rows: DofMap, cols: DofMap):
        key = (rows.kind, cols.kind)
        if key not in self._patterns:
            r = np.repeat(rows.cell_dofs[:, :, None], cols.cell_dofs.shape[1], axis=2)
            c = np.repeat(cols.cell_dofs[:, None, :], rows.cell_dofs.shape[1], axis=1)
            flat = r.ravel() * cols.n_dofs + c.ravel()
            uniq, inv = np.unique(flat, return_inverse=True)
            ur, uc = np.divmod(uniq, cols.n_dofs)
            indptr = np.zeros(rows.n_dofs + 1, dtype=np.int64)
            np.add.at(indptr, ur + 1, 1)
            indptr = np.cumsum(indptr)
            self._patterns[key] = (inv.ravel(), uc, indptr, len(uniq))
        return self._patterns[key]

    def scatter_matrix(self, local: np.ndarray, rows: DofMap, cols: DofMap) -> SparseMatrix:
        inv, indices, indptr, nnz = self._pattern(rows, cols)
        data = np.bincount(inv, weights=local.ravel(), minlength=nnz)
        csr = sp.csr_matrix((data, indices, indptr), shape=(rows.n_dofs, cols.n_dofs))
        return SparseMatrix(csr)

    def scatter_vector(self, local: np.ndarray, dm: DofMap) -> np.ndarray:
        return np.bincount(dm.cell_dofs.ravel(), weights=local.ravel(), minlength=dm.n_dofs)

    def test_p1(self, f: np.ndarray) -> np.ndarray:
        """(f, chi_i) for scalar quadrature-point values f of shape (nt, nq)."""
        return self.scatter_vector(np.matmul(self.wN1, f[:, :, None])[..., 0], self.p1)

    def test_p2v(self, f: np.ndarray) -> np.ndarray:
        """(f, v_i) for vector quadrature-point values f of shape (nt, nq, 2)."""
        loc = np.matmul(self.wN2, f)  # (nt, 6, 2)
        return self.scatter_vector(loc.transpose(0, 2, 1).reshape(len(f), 12), self.p2v)

    def physical_gradients(self, ref: np.ndarray) -> np.ndarray:
        """Map reference gradients (nt, m, 2) to physical ones through inv(J)^T."""
        return np.matmul(ref, self.invT.transpose(0, 2, 1))

    def cached(self, name, build):
        if name not in self._ops:
            self._ops[name] = build()
        return self._ops[name]

    def lumped_p1(self) -> np.ndarray:
        """Row sums of the P1 mass matrix, i.e. the integrals of the hats."""
        return self.cached("lumped_p1", lambda: assemble_load(self, LoadKind.scalar_source, f=1.0))


def spaces_for(mesh: Mesh) -> Spaces:
    """The default-quadrature :class:`Spaces` of a mesh, built once."""
    if "spaces" not in mesh._cache:
        mesh._cache["spaces"] = Spaces(mesh)
    return mesh._cache["spaces"]


# ---------------------------------------------------------------------------
# fields

@dataclass(frozen=True, eq=False)
class Field:
    dofmap: DofMap
    coefficients: np.ndarray
    _qp: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.dofmap.n_dofs,):
            raise ValueError(f"coefficient vector of length {c.shape} does not match "
                             f"{self.dofmap.n_dofs} dofs")
        object.__setattr__(self, "coefficients", c)

    @property
    def kind(self) -> ElementKind:
        return self.dofmap.kind

    def at_qp(self, S: Spaces):
        """Values and gradients at every quadrature point.

        Scalar: (nt, nq) and (nt, nq, 2).  Vector: (nt, nq, 2) and
        (nt, nq, 2, 2) indexed [component, derivative].
        """
        key = id(S)
        if key not in self._qp:
            self._qp.clear()
            self._qp[key] = self._eval_qp(S)
        return self._qp[key]

    def _eval_qp(self, S: Spaces):
        c = self.coefficients[self.dofmap.cell_dofs]
        nt, nq = S.wdet.shape
        if self.kind is ElementKind.P1_scalar:
            vals = c @ S.N1.T
            grad = np.einsum("tb,tbd->td", c, S.G1)
            return vals, np.broadcast_to(grad[:, None, :], vals.shape + (2,))
        g2 = S.g2ref.transpose(1, 0, 2).reshape(6, nq * 2)
        if self.kind is ElementKind.P2_scalar:
            ref = (c @ g2).reshape(nt, nq, 2)
            return c @ S.N2.T, S.physical_gradients(ref)
        c = c.reshape(nt * 2, 6)
        vals = (c @ S.N2.T).reshape(nt, 2, nq).transpose(0, 2, 1)
        ref = (c @ g2).reshape(nt, 2 * nq, 2)
        grads = S.physical_gradients(ref).reshape(nt, 2, nq, 2).transpose(0, 2, 1, 3)
        return vals, grads

    def __add__(self, other: "Field") -> "Field":
        return Field(self.dofmap, self.coefficients + other.coefficients)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.dofmap, self.coefficients - other.coefficients)

    def scaled(self, s: float) -> "Field":
        return Field(self.dofmap, s * self.coefficients)


@dataclass(frozen=True, eq=False)
class Velocity:
    """P2 velocity minus a constant vector on every cell.

    The end-of-step velocity of the projection step is ``u_tilde - tau *
    grad(psi)`` with ``psi`` piecewise linear, so it is a continuous P2
    field plus a cellwise constant.  ``offset`` holds ``tau * grad(psi)``.
    """

    base: Field
    offset: Optional[np.ndarray] = None
    _qp: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def kind(self) -> ElementKind:
        return ElementKind.P2_vector2

    def at_qp(self, S: Spaces):
        vals, grads = self.base.at_qp(S)
        if self.offset is None:
            return vals, grads
        key = id(S)
        if key not in self._qp:
            self._qp.clear()
            self._qp[key] = vals - self.offset[:, None, :]
        return self._qp[key], grads

    def vertex_values(self) -> np.ndarray:
        """Per-vertex velocity, averaging the offset over incident cells."""
        dm = self.base.dofmap
        mesh = dm.mesh
        nv = mesh.n_vertices
        nn = dm.n_nodes
        c = self.base.coefficients
        out = np.column_stack([c[:nv], c[nn:nn + nv]])
        if self.offset is not None:
            tri = mesh.triangles.ravel()
            cnt = np.bincount(tri, minlength=nv)
            for k in range(2):
                s = np.bincount(tri, weights=np.repeat(self.offset[:, k], 3), minlength=nv)
                out[:, k] -= s / cnt
        return out


VelocityLike = Union[Field, Velocity]


def as_velocity(u: VelocityLike) -> Velocity:
    return u if isinstance(u, Velocity) else Velocity(u)


def zero_field(dm: DofMap) -> Field:
    return Field(dm, np.zeros(dm.n_dofs))


def interpolate(dofmap: DofMap, f) -> Field:
    """Nodal interpolant of ``f(x, y)``.

    Scalars accept a constant or a vectorized callable; vector fields
    accept a callable returning ``(fx, fy)`` or a pair of constants.
    """
    xy = dofmap.dof_coords[: dofmap.n_nodes]
    x, y = xy[:, 0], xy[:, 1]
    if dofmap.kind is ElementKind.P2_vector2:
        v = f(x, y) if callable(f) else f
        fx, fy = (np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in v)
        return Field(dofmap, np.concatenate([fx, fy]))
    v = f(x, y) if callable(f) else f
    return Field(dofmap, np.broadcast_to(np.asarray(v, dtype=float), x.shape).copy())


def eval_field(field: Field, triangle: int, ref_point):
    """Value and physical gradient of ``field`` at a reference point of a cell."""
    dm = field.dofmap
    mesh = dm.mesh
    if not 0 <= triangle < mesh.n_triangles:
        raise IndexError(f"triangle {triangle} out of range")
    pt = np.asarray(ref_point, dtype=float)
    _check_ref(pt)
    _, _, invT = mesh.jacobians()
    vals, grads = reference_tables(dm.kind.scalar, pt[None, :])
    phys = grads[0] @ invT[triangle].T  # (nb, 2)
    c = field.coefficients[dm.cell_dofs[triangle]]
    if dm.kind is ElementKind.P2_vector2:
        c = c.reshape(2, 6)
        return c @ vals[0], c @ phys
    return float(c @ vals[0]), c @ phys


# ---------------------------------------------------------------------------
# operators

class OperatorKind(enum.Enum):
    mass_s = "mass_s"
    stiffness_s = "stiffness_s"
    mass_v = "mass_v"
    stiffness_v = "stiffness_v"
    convection_phi = "convection_phi"
    pressure_grad = "pressure_grad"
    ch_coupling = "ch_coupling"


def _blockdiag2(local6: np.ndarray) -> np.ndarray:
    nt = local6.shape[0]
    out = np.zeros((nt, 12, 12))
    out[:, :6, :6] = local6
    out[:, 6:, 6:] = local6
    return out


def local_matrices(S: Spaces, kind: OperatorKind, w: Optional[VelocityLike] = None) -> np.ndarray:
    """Element matrices, shape (nt, n_test, n_trial)."""
    if kind is OperatorKind.mass_s:
        return np.einsum("tq,qi,qj->tij", S.wdet, S.N1, S.N1)
    if kind is OperatorKind.stiffness_s:
        area = S.wdet.sum(axis=1)
        return area[:, None, None] * np.einsum("tid,tjd->tij", S.G1, S.G1)
    if kind is OperatorKind.mass_v:
        return _blockdiag2(np.einsum("tq,qi,qj->tij", S.wdet, S.N2, S.N2))
    if kind is OperatorKind.stiffness_v:
        return _blockdiag2(np.einsum("tq,tqid,tqjd->tij", S.wdet, S.G2, S.G2))
    if kind is OperatorKind.convection_phi:
        if w is None:
            raise ValueError("convection_phi needs an advecting velocity")
        wv, _ = w.at_qp(S)
        # (w . grad chi_j) chi_i
        wg = np.matmul(wv, S.G1.transpose(0, 2, 1))
        return np.matmul(S.wN1, wg)
    if kind is OperatorKind.pressure_grad:
        # rows: velocity dof (component c, node a); cols: P1 node j
        loc = np.einsum("tq,qa,tjc->tcaj", S.wdet, S.N2, S.G1)
        return loc.reshape(S.n_triangles, 12, 3)
    raise ValueError(f"no element matrix for {kind}")


_SPACES = {
    OperatorKind.mass_s: ("p1", "p1"),
    OperatorKind.stiffness_s: ("p1", "p1"),
    OperatorKind.mass_v: ("p2v", "p2v"),
    OperatorKind.stiffness_v: ("p2v", "p2v"),
    OperatorKind.convection_phi: ("p1", "p1"),
    OperatorKind.pressure_grad: ("p2v", "p1"),
}


def assemble_operator(S: Spaces, kind: OperatorKind, w: Optional[VelocityLike] = None,
                      **coeffs) -> SparseMatrix:
    """Global matrix with rows indexed by test and columns by trial dofs.

    ``ch_coupling`` builds the Cahn-Hilliard block system
    ``[[M/tau + C(w), mobility*K], [-lam*K, M]]`` from keyword
    arguments ``tau``, ``mobility`` and ``lam``.
    """
    if w is not None and w.kind is not ElementKind.P2_vector2:
        raise ValueError("advecting velocity must live in the P2 vector space")
    if w is not None and as_velocity(w).base.dofmap.mesh is not S.mesh:
        raise ValueError("velocity field lives on a different mesh")
    if kind is OperatorKind.ch_coupling:
        M = operator(S, OperatorKind.mass_s)
        K = operator(S, OperatorKind.stiffness_s)
        C = assemble_operator(S, OperatorKind.convection_phi, w=w)
        top = M.csr / coeffs["tau"] + C.csr
        blk = sp.bmat([[top, coeffs["mobility"] * K.csr],
                       [-coeffs["lam"] * K.csr, M.csr]], format="csr")
        return SparseMatrix(blk)
    rows, cols = (getattr(S, a) for a in _SPACES[kind])
    return S.scatter_matrix(local_matrices(S, kind, w), rows, cols)


def operator(S: Spaces, kind: OperatorKind) -> SparseMatrix:
    """Cached version of :func:`assemble_operator` for coefficient-free kinds."""
    return S.cached(kind, lambda: assemble_operator(S, kind))


def assemble_operator_triplets(S: Spaces, kind: OperatorKind, w=None) -> SparseMatrix:
    """Reference path through a TripletBuffer; slower, used for cross-checks."""
    rows, cols = (getattr(S, a) for a in _SPACES[kind])
    loc = local_matrices(S, kind, w)
    buf = TripletBuffer()
    for t in range(S.n_triangles):
        for a, i in enumerate(rows.cell_dofs[t]):
            for b, j in enumerate(cols.cell_dofs[t]):
                buf.add(i, j, loc[t, a, b])
    return to_sparse(buf, rows.n_dofs, cols.n_dofs)


# ---------------------------------------------------------------------------
# loads

class LoadKind(enum.Enum):
    scalar_source = "scalar_source"
    vector_source = "vector_source"
    nonlinear_fprime = "nonlinear_fprime"
    capillary = "capillary"
    skew_convection = "skew_convection"


def fprime(phi, epsilon: float):
    return (phi ** 3 - phi) / epsilon ** 2


def double_well(phi, epsilon: float):
    return (phi ** 2 - 1.0) ** 2 / (4.0 * epsilon ** 2)


def _source_values(S: Spaces, f, t=None):
    x, y = S.xq[..., 0], S.xq[..., 1]
    if callable(f):
        return f(x, y) if t is None else f(t, x, y)
    return f


def assemble_load(S: Spaces, kind: LoadKind, f=None, phi: Optional[Field] = None,
                  mu: Optional[Field] = None, u: Optional[VelocityLike] = None,
                  epsilon: Optional[float] = None) -> np.ndarray:
    """Vector of test-function integrals.

    scalar_source(f)      (f, chi_i)                    on P1
    vector_source(f)      (f, v_i)                      on P2 vector
    nonlinear_fprime(phi) (F'(phi), chi_i)              on P1
    capillary(phi, mu)    (mu grad phi, v_i)            on P2 vector
    skew_convection(u)    B(u, u, v_i)                  on P2 vector
    """
    nt = S.n_triangles
    if kind is LoadKind.scalar_source:
        fv = np.broadcast_to(np.asarray(_source_values(S, f), dtype=float), S.wdet.shape)
        return S.test_p1(fv)
    if kind is LoadKind.nonlinear_fprime:
        _check_same_mesh(S, phi)
        pv, _ = phi.at_qp(S)
        return S.test_p1(fprime(pv, epsilon))
    if kind is LoadKind.vector_source:
        fx, fy = _source_values(S, f)
        fv = np.stack([np.broadcast_to(np.asarray(fx, float), S.wdet.shape),
                       np.broadcast_to(np.asarray(fy, float), S.wdet.shape)], axis=-1)
        return S.test_p2v(fv)
    if kind is LoadKind.capillary:
        _check_same_mesh(S, phi, mu)
        _, gphi = phi.at_qp(S)
        muv, _ = mu.at_qp(S)
        return S.test_p2v(muv[:, :, None] * gphi)
    if kind is LoadKind.skew_convection:
        uv, gu = as_velocity(u).at_qp(S)
        # 1/2 [ (u.grad)u . v_i  -  (u.grad)v_i . u ]
        adv = np.matmul(gu, uv[..., None])[..., 0]
        first = np.matmul(S.wN2, adv)  # (nt, 6, 2)
        w = np.matmul(uv, S.invT)  # u in reference coordinates, (nt, nq, 2)
        ugv = np.matmul(w.transpose(1, 0, 2), S.g2ref.transpose(0, 2, 1)).transpose(1, 0, 2)
        second = np.matmul((S.wdet[:, :, None] * ugv).transpose(0, 2, 1), uv)
        loc = 0.5 * (first - second)
        return S.scatter_vector(loc.transpose(0, 2, 1).reshape(nt, 12), S.p2v)
    raise ValueError(f"unknown load kind {kind}")


def velocity_mass_load(S: Spaces, u: VelocityLike) -> np.ndarray:
    """(u, v_i) for a possibly cellwise-offset velocity."""
    uv, _ = as_velocity(u).at_qp(S)
    return S.test_p2v(uv)


def divergence_residual(S: Spaces, u: VelocityLike) -> np.ndarray:
    """(u, grad q_i) for every P1 hat q_i; zero for weakly solenoidal u."""
    uv, _ = as_velocity(u).at_qp(S)
    mean = np.einsum("tq,tqc->tc", S.wdet, uv)
    return S.scatter_vector(np.einsum("tc,tjc->tj", mean, S.G1), S.p1)


def l2_norm_sq(S: Spaces, f: VelocityLike) -> float:
    vals, _ = f.at_qp(S)
    if vals.ndim == 3:
        return S.integrate(np.sum(vals ** 2, axis=-1))
    return S.integrate(vals ** 2)


def _check_same_mesh(S: Spaces, *fields):
    for f in fields:
        if f is None:
            raise ValueError("missing field argument")
        if f.dofmap.mesh is not S.mesh:
            raise ValueError("field lives on a different mesh")


def trilinear_B(S: Spaces, u: VelocityLike, v: VelocityLike, w: VelocityLike) -> float:
    """Skew-symmetrized convection form B(u, v, w)."""
    uv, _ = as_velocity(u).at_qp(S)
    vv, gv = as_velocity(v).at_qp(S)
    wv, gw = as_velocity(w).at_qp(S)
    a = np.einsum("tqd,tqcd,tqc->tq", uv, gv, wv)
    b = np.einsum("tqd,tqcd,tqc->tq", uv, gw, vv)
    return 0.5 * S.integrate(a - b)
